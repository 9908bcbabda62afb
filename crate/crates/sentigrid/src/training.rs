//! Prediction heads, the joint loss, the Adam optimizer with global-norm
//! clipping and inverse-time learning-rate decay, the training loop, and
//! checkpoint serialization.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{LrDecay, ModelConfig, Task};
use crate::data::Example;
use crate::eval::{score, MetricReport};
use crate::model::{upper_row_indices, ForwardOutputs, Model, ModelError};
use crate::params::{xavier, Bindings, ParamStore};
use crate::rng::SeedRng;
use crate::tagging::{encode_grid, Gold, PairLabel, TagGrid, TermTag};
use crate::tensor::{Graph, NodeId, Real, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGrad(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

// ── heads ────────────────────────────────────────────────────────────

pub fn init_head_params(cfg: &ModelConfig, store: &mut ParamStore, seed: &SeedRng) {
    let d = cfg.hidden_dim;
    store.insert("head.term.w", xavier(d, TermTag::COUNT, &mut seed.split("head.term.w")));
    store.insert("head.term.b", crate::params::zeros_row(TermTag::COUNT));
    if cfg.use_pair_encoder {
        let hp = cfg.pair_channels();
        store.insert("head.pola.w", xavier(hp, PairLabel::COUNT, &mut seed.split("head.pola.w")));
        store.insert("head.pola.b", crate::params::zeros_row(PairLabel::COUNT));
        if cfg.task == Task::Aesc {
            store.insert(
                "head.diag_pola.w",
                xavier(hp, PairLabel::COUNT, &mut seed.split("head.diag_pola.w")),
            );
            store.insert("head.diag_pola.b", crate::params::zeros_row(PairLabel::COUNT));
        }
    }
}

/// Per-token logits over the five term tags: `[n x 5]`.
pub fn term_head(g: &mut Graph, binds: &Bindings, seq_state: NodeId) -> crate::tensor::Result<NodeId> {
    let logits = g.matmul(seq_state, binds.get("head.term.w"))?;
    g.add_bias(logits, binds.get("head.term.b"))
}

/// Per-cell logits over {NONE, POS, NEU, NEG} for the packed strict upper
/// triangle: `[n(n-1)/2 x 4]`.
pub fn pair_head(g: &mut Graph, binds: &Bindings, pair_grid: NodeId, n: usize) -> crate::tensor::Result<NodeId> {
    let rows = upper_row_indices(n);
    let cells = g.gather_rows(pair_grid, &rows)?;
    let logits = g.matmul(cells, binds.get("head.pola.w"))?;
    g.add_bias(logits, binds.get("head.pola.b"))
}

/// Per-token polarity logits read off the grid diagonal: `[n x 4]`.
pub fn diag_polarity_head(
    g: &mut Graph,
    binds: &Bindings,
    pair_grid: NodeId,
    n: usize,
) -> crate::tensor::Result<NodeId> {
    let rows: Vec<usize> = (0..n).map(|i| i * n + i).collect();
    let cells = g.gather_rows(pair_grid, &rows)?;
    let logits = g.matmul(cells, binds.get("head.diag_pola.w"))?;
    g.add_bias(logits, binds.get("head.diag_pola.b"))
}

// ── joint loss ───────────────────────────────────────────────────────

pub struct LossNodes {
    pub total: NodeId,
    pub term: NodeId,
    pub polarity: NodeId,
}

/// `L = L_term + L_pola`: summed token-level cross-entropy over unmasked
/// positions plus summed cell-level cross-entropy over unmasked strict-upper
/// cells (and, for the aspect-polarity task, over diagonal positions). NONE
/// cells are trained with a configurable class weight.
pub fn joint_loss(
    g: &mut Graph,
    cfg: &ModelConfig,
    out: &ForwardOutputs,
    grid: &TagGrid,
    mask: &[bool],
) -> crate::tensor::Result<LossNodes> {
    let n = grid.n();
    let term_golds: Vec<usize> = grid.diag().iter().map(|t| t.index()).collect();
    let term = g.cross_entropy_rows(out.term_logits, &term_golds, mask, None)?;

    let class_weights = [cfg.none_class_weight, 1.0, 1.0, 1.0];
    let mut polarity_parts: Vec<NodeId> = Vec::new();
    if let Some(pair_logits) = out.pair_logits {
        let golds: Vec<usize> = grid.pairs().iter().map(|l| l.index()).collect();
        let cell_mask: Vec<bool> =
            crate::tagging::upper_cells(n).map(|(i, j)| mask[i] && mask[j]).collect();
        polarity_parts.push(g.cross_entropy_rows(pair_logits, &golds, &cell_mask, Some(&class_weights))?);
    }
    if let Some(diag_logits) = out.diag_polarity_logits {
        let diag = grid.diag_polarity().expect("aspect-polarity grid has a diagonal polarity row");
        let golds: Vec<usize> = diag.iter().map(|l| l.index()).collect();
        polarity_parts.push(g.cross_entropy_rows(diag_logits, &golds, mask, Some(&class_weights))?);
    }
    let polarity = match polarity_parts[..] {
        [] => g.constant(Tensor::scalar(0.0)),
        [single] => single,
        [a, b] => g.add(a, b)?,
        _ => unreachable!("at most two polarity losses"),
    };
    let total = g.add(term, polarity)?;
    Ok(LossNodes { total, term, polarity })
}

// ── optimizer ────────────────────────────────────────────────────────

const ADAM_BETA1: Real = 0.9;
const ADAM_BETA2: Real = 0.999;
const ADAM_EPS: Real = 1e-8;

/// Optimizer and schedule state across steps.
#[derive(Debug, Clone, Default)]
pub struct TrainState {
    pub step: usize,
    m: BTreeMap<String, Vec<Real>>,
    v: BTreeMap<String, Vec<Real>>,
}

/// Learning rate at a given global step.
pub fn current_lr(cfg: &ModelConfig, step: usize) -> Real {
    let t = step as Real / cfg.decay_steps as Real;
    match cfg.lr_decay {
        LrDecay::InverseTime => cfg.learning_rate / (1.0 + cfg.decay_rate * t),
        LrDecay::Exponential => cfg.learning_rate * cfg.decay_rate.powf(t),
    }
}

/// Apply one Adam update from the store's accumulated gradients: global-norm
/// clip, bias-corrected moments, decayed learning rate. Returns the rate
/// used. Gradients are zeroed afterwards.
pub fn optimizer_step(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    state: &mut TrainState,
) -> Result<Real, TrainError> {
    for (name, p) in store.iter() {
        if p.grad.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGrad(name.to_string()));
        }
    }
    let norm = store.grad_global_norm();
    let scale = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
    let lr = current_lr(cfg, state.step);
    let t = (state.step + 1) as Real;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);

    for (name, p) in store.iter_mut() {
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; p.grad.len()]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; p.grad.len()]);
        let theta = p.value.data_mut();
        for k in 0..p.grad.len() {
            let gk = p.grad[k] * scale;
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    state.step += 1;
    store.zero_grads();
    Ok(lr)
}

// ── training loop ────────────────────────────────────────────────────

/// One row of the training log. Dev metrics appear on epoch boundaries.
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub step: usize,
    pub lr: Real,
    pub l_term: Real,
    pub l_pola: Real,
    pub dev: Option<(Real, Real, Real)>,
}

impl TrainLogRow {
    pub fn csv_header() -> &'static str {
        "step,lr,l_term,l_pola,dev_p,dev_r,dev_f1"
    }

    pub fn to_csv(&self) -> String {
        match self.dev {
            Some((p, r, f1)) => format!(
                "{},{:.10e},{:.10e},{:.10e},{:.6},{:.6},{:.6}",
                self.step, self.lr, self.l_term, self.l_pola, p, r, f1
            ),
            None => {
                format!("{},{:.10e},{:.10e},{:.10e},,,", self.step, self.lr, self.l_term, self.l_pola)
            }
        }
    }
}

pub struct TrainOutcome {
    pub log: Vec<TrainLogRow>,
    pub best_dev_f1: Option<Real>,
    pub final_train_f1: Real,
    pub epochs_run: usize,
    pub steps_run: usize,
}

/// Pre-encoded training example.
struct Encoded {
    index: usize,
    grid: TagGrid,
}

/// Train in place; `model.params` holds the best-dev parameters on return
/// (or the final parameters when no dev set is given). Deterministic given
/// the config seed: shuffling, dropout, and gradient reduction order are all
/// derived from it, independent of thread scheduling.
pub fn train(
    model: &mut Model,
    train_set: &[Example],
    dev_set: Option<&[Example]>,
) -> Result<TrainOutcome, TrainError> {
    let cfg = model.config.clone();
    let seed = SeedRng::new(cfg.seed);

    // Encode grids once; conflicted examples are skipped with a warning.
    let mut encoded: Vec<Encoded> = Vec::new();
    for (index, ex) in train_set.iter().enumerate() {
        match encode_grid(ex.n(), &ex.gold) {
            Ok(grid) => encoded.push(Encoded { index, grid }),
            Err(e) => log::warn!("skipping example {} from training: {e}", ex.id),
        }
    }

    let golds: Vec<Gold> = train_set.iter().map(|e| e.gold.clone()).collect();
    let mut state = TrainState::default();
    let mut log_rows: Vec<TrainLogRow> = Vec::new();
    let mut best_dev_f1: Option<Real> = None;
    let mut best_params: Option<ParamStore> = None;
    let mut final_train_f1 = 0.0;
    let mut epochs_run = 0;

    'training: for epoch in 0..cfg.max_epochs {
        if state.step >= cfg.max_steps || encoded.is_empty() {
            break;
        }
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        shuffle(&mut order, &mut seed.split_indexed("train.shuffle", epoch as u64));

        for batch in order.chunks(cfg.batch_size) {
            if state.step >= cfg.max_steps {
                break;
            }
            let step = state.step;
            // Per-example graphs, computed in parallel; gradients and losses
            // are reduced in fixed batch order afterwards.
            let results: Vec<Result<(Graph, Bindings, Real, Real), TrainError>> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &enc_idx)| {
                    let enc = &encoded[enc_idx];
                    let ex = &train_set[enc.index];
                    let mut rng = seed
                        .split_indexed("train.dropout", (step * cfg.batch_size + slot) as u64);
                    let mut g = Graph::new();
                    let mask = vec![true; ex.n()];
                    let out = model.forward(&mut g, ex, true, &mut rng)?;
                    let loss = joint_loss(&mut g, &cfg, &out, &enc.grid, &mask)?;
                    g.backward(loss.total)?;
                    let l_term = g.value(loss.term).item();
                    let l_pola = g.value(loss.polarity).item();
                    Ok((g, out.binds, l_term, l_pola))
                })
                .collect();

            let batch_scale = 1.0 / batch.len() as Real;
            let mut l_term_mean = 0.0;
            let mut l_pola_mean = 0.0;
            for result in results {
                let (g, binds, l_term, l_pola) = result?;
                model.params.accumulate_grads(&g, &binds, batch_scale);
                l_term_mean += l_term * batch_scale;
                l_pola_mean += l_pola * batch_scale;
            }
            let lr = optimizer_step(&cfg, &mut model.params, &mut state)?;
            log_rows.push(TrainLogRow {
                step: state.step - 1,
                lr,
                l_term: l_term_mean,
                l_pola: l_pola_mean,
                dev: None,
            });
        }

        // end of epoch: dev evaluation and early-stop checks
        if let Some(dev) = dev_set {
            let preds = model.predict_corpus(dev)?;
            let dev_golds: Vec<Gold> = dev.iter().map(|e| e.gold.clone()).collect();
            let report = score(&preds, &dev_golds, cfg.task);
            let f1 = report.main.f1;
            if let Some(row) = log_rows.last_mut() {
                row.dev = Some((report.main.precision, report.main.recall, f1));
            }
            if best_dev_f1.map_or(true, |best| f1 > best) {
                best_dev_f1 = Some(f1);
                best_params = Some(model.params.clone());
            }
        }
        if let Some(target) = cfg.target_train_f1 {
            let preds = model.predict_corpus(train_set)?;
            final_train_f1 = score(&preds, &golds, cfg.task).main.f1;
            if final_train_f1 >= target {
                log::info!("target train F1 {target} reached at epoch {}", epoch + 1);
                break 'training;
            }
        }
    }

    if cfg.target_train_f1.is_none() {
        let preds = model.predict_corpus(train_set)?;
        final_train_f1 = score(&preds, &golds, cfg.task).main.f1;
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(TrainOutcome {
        log: log_rows,
        best_dev_f1,
        final_train_f1,
        epochs_run,
        steps_run: state.step,
    })
}

/// Fisher-Yates from the named stream.
fn shuffle(items: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Evaluate a model on a corpus.
pub fn evaluate(model: &Model, examples: &[Example]) -> Result<MetricReport, TrainError> {
    let preds = model.predict_corpus(examples)?;
    let golds: Vec<Gold> = examples.iter().map(|e| e.gold.clone()).collect();
    Ok(score(&preds, &golds, model.config.task))
}

// ── checkpoints ──────────────────────────────────────────────────────

const CKPT_MAGIC: &[u8; 8] = b"SGRID\0v1";

/// Binary checkpoint: magic + version, config and vocab as JSON, the frozen
/// word table, then each named parameter with its shape. All floats are
/// little-endian f64 regardless of the build's `Real`.
pub fn save_checkpoint(path: &Path, model: &Model) -> Result<(), TrainError> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    let cfg_json = serde_json::to_vec(&model.config).expect("config serializes");
    out.extend_from_slice(&(cfg_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg_json);
    let vocab_json = serde_json::to_vec(&model.vocab).expect("vocab serializes");
    out.extend_from_slice(&(vocab_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&vocab_json);

    write_tensor(&mut out, "word_table", &model.word_table);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for (name, p) in model.params.iter() {
        write_tensor(&mut out, name, &p.value);
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        // no-op cast at f64; widens under the f32 feature
        #[allow(clippy::unnecessary_cast)]
        out.extend_from_slice(&(v as f64).to_le_bytes());
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Model, TrainError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0, path: path.display().to_string() };

    let magic = r.take(8)?;
    if magic != CKPT_MAGIC {
        return Err(r.err("bad magic or unsupported format version"));
    }
    let cfg_len = r.u64()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| TrainError::Checkpoint { path: r.path.clone(), msg: format!("config: {e}") })?;
    let vocab_len = r.u64()? as usize;
    let mut vocab: crate::embedding::Vocab = serde_json::from_slice(r.take(vocab_len)?)
        .map_err(|e| TrainError::Checkpoint { path: r.path.clone(), msg: format!("vocab: {e}") })?;
    vocab.reindex();

    let (name, word_table) = r.tensor()?;
    if name != "word_table" {
        return Err(r.err("expected word table section"));
    }
    let n_params = r.u64()? as usize;

    let mut model = Model::new(config, vocab, word_table)
        .map_err(|e| TrainError::Checkpoint { path: r.path.clone(), msg: e.to_string() })?;
    let mut loaded = 0usize;
    for _ in 0..n_params {
        let (name, tensor) = r.tensor()?;
        if !model.params.contains(&name) {
            return Err(r.err(&format!("checkpoint parameter {name} not in model")));
        }
        let expect = model.params.value(&name).shape().to_vec();
        if expect != tensor.shape() {
            return Err(r.err(&format!(
                "parameter {name}: checkpoint shape {:?} vs model shape {expect:?}",
                tensor.shape()
            )));
        }
        model.params.get_mut(&name).value = tensor;
        loaded += 1;
    }
    if loaded != model.params.len() {
        return Err(r.err(&format!(
            "checkpoint holds {loaded} parameters, model expects {}",
            model.params.len()
        )));
    }
    Ok(model)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> TrainError {
        TrainError::Checkpoint { path: self.path.clone(), msg: msg.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor), TrainError> {
        let name_len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| self.err("non-utf8 parameter name"))?
            .to_string();
        let rank = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
            data.push(v as Real);
        }
        Ok((name, Tensor::new(shape, data)))
    }
}
