//! Command implementations behind the `sentigrid` binary: train, eval,
//! predict, check (grid round-trip / gradient / recurrence equivalence), and
//! the wavefront bench. Every command materializes a run manifest into its
//! output directory before computing anything; rerunning from a manifest
//! reproduces outputs exactly.
//!
//! Exit codes: 0 success, 1 data/model error (or a failed check), 2 usage.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, DirectionMode, ModelConfig, Task};
use crate::data::{load_contextual, parse_dataset, Example, ParseError};
use crate::embedding::{load_word_embeddings, random_word_table, EmbedError, Vocab};
use crate::model::{Model, ModelError};
use crate::pair_encoder::{mdgru_naive, mdgru_wavefront, GruDirWeights, ScanDir};
use crate::rng::SeedRng;
use crate::tagging::{decode_aesc, decode_aste, encode_grid, Gold};
use crate::tensor::{grad_check, Real};
use crate::training::{
    self, evaluate, load_checkpoint, save_checkpoint, train, TrainError, TrainLogRow,
};

pub const MANIFEST_VERSION: u32 = 1;

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "SENTIGRID_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

macro_rules! data_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error_from!(ParseError, EmbedError, ModelError, TrainError, std::io::Error);

/// Everything needed to reproduce a run, written before any computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub config: ModelConfig,
    pub train_path: Option<String>,
    pub dev_path: Option<String>,
    pub data_path: Option<String>,
    pub model_path: Option<String>,
    pub glove_path: Option<String>,
    pub contextual_path: Option<String>,
    #[serde(default)]
    pub dev_contextual_path: Option<String>,
    pub out_dir: String,
}

impl RunManifest {
    fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<RunManifest, CliError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

fn resolve_out(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var(OUT_DIR_ENV).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("sentigrid_out"))
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

// ── train ────────────────────────────────────────────────────────────

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    /// Flat key=value config file (CLI flags override it).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Development dataset for best-checkpoint selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Output directory (default: $SENTIGRID_OUT or ./sentigrid_out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<Task>,
    /// Pair-encoder scan mode: uni|bi|quad.
    #[arg(long)]
    pub directions: Option<DirectionMode>,
    /// Encoder layer count.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Ablation: diagonal-only model, no pair grid.
    #[arg(long)]
    pub no_pair_encoder: bool,
    /// Ablation: encoders share only the token representation.
    #[arg(long)]
    pub no_interaction: bool,
    /// Ablation: drop the character-level representation.
    #[arg(long)]
    pub no_char: bool,
    /// GloVe-format word vectors; absent = random frozen table.
    #[arg(long)]
    pub glove: Option<PathBuf>,
    /// Precomputed contextual vectors for the training set, keyed by
    /// example id (line index) within that file.
    #[arg(long)]
    pub contextual: Option<PathBuf>,
    /// Contextual vectors for the dev set; required when both --dev and
    /// --contextual are given.
    #[arg(long)]
    pub dev_contextual: Option<PathBuf>,
    /// Extra key=value overrides, highest precedence.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Re-run an earlier training run from its manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
}

fn apply_overrides(cfg: &mut ModelConfig, args: &TrainArgs) -> Result<(), CliError> {
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv}")))?;
        cfg.apply_kv(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(task) = args.task {
        cfg.task = task;
    }
    if let Some(dirs) = args.directions {
        cfg.directions = dirs;
    }
    if let Some(layers) = args.layers {
        cfg.n_layers = layers;
    }
    if args.no_pair_encoder {
        cfg.use_pair_encoder = false;
    }
    if args.no_interaction {
        cfg.use_interaction = false;
    }
    if args.no_char {
        cfg.use_char = false;
    }
    Ok(())
}

pub fn run_train(mut args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = ModelConfig::default();
    if let Some(manifest_path) = &args.from_manifest {
        let manifest = RunManifest::read(manifest_path)?;
        cfg = manifest.config;
        cfg.plm_dim = None; // re-resolved from the contextual file below
        if args.train.is_none() {
            args.train = manifest.train_path.map(PathBuf::from);
        }
        if args.dev.is_none() {
            args.dev = manifest.dev_path.map(PathBuf::from);
        }
        if args.glove.is_none() {
            args.glove = manifest.glove_path.map(PathBuf::from);
        }
        if args.contextual.is_none() {
            args.contextual = manifest.contextual_path.map(PathBuf::from);
        }
        if args.dev_contextual.is_none() {
            args.dev_contextual = manifest.dev_contextual_path.map(PathBuf::from);
        }
    }
    apply_overrides(&mut cfg, &args)?;
    cfg.normalize();
    cfg.validate()?;

    let train_path =
        args.train.clone().ok_or_else(|| CliError::Usage("--train is required".into()))?;
    let out_dir = resolve_out(&args.out);

    // manifest first; plm_dim stays unresolved here and is re-derived from
    // the recorded contextual path on any rerun
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        command: "train".into(),
        config: cfg.clone(),
        train_path: Some(train_path.display().to_string()),
        dev_path: path_str(&args.dev),
        data_path: None,
        model_path: None,
        glove_path: path_str(&args.glove),
        contextual_path: path_str(&args.contextual),
        dev_contextual_path: path_str(&args.dev_contextual),
        out_dir: out_dir.display().to_string(),
    };
    manifest.write(&out_dir)?;

    if args.contextual.is_some() && args.dev.is_some() && args.dev_contextual.is_none() {
        return Err(CliError::Usage(
            "--dev-contextual is required when --dev and --contextual are both given".into(),
        ));
    }
    let mut train_set = parse_dataset(&train_path, cfg.task)?;
    let mut dev_set = match &args.dev {
        Some(path) => Some(parse_dataset(path, cfg.task)?),
        None => None,
    };
    if let Some(ctx) = &args.contextual {
        let width = load_contextual(ctx, &mut train_set)?;
        cfg.plm_dim = Some(width);
        if let (Some(dev), Some(dev_ctx)) = (dev_set.as_mut(), &args.dev_contextual) {
            let dev_width = load_contextual(dev_ctx, dev)?;
            if dev_width != width {
                return Err(CliError::Data(format!(
                    "contextual dims differ: train {width}, dev {dev_width}"
                )));
            }
        }
    }

    let vocab = Vocab::build(train_set.iter().map(|e| e.tokens.as_slice()));
    let seed = SeedRng::new(cfg.seed);
    let word_table = match &args.glove {
        Some(path) => load_word_embeddings(path, cfg.word_dim, &vocab, &seed)?,
        None => random_word_table(cfg.word_dim, &vocab, &seed),
    };

    let mut model = Model::new(cfg, vocab, word_table)?;
    let outcome = train(&mut model, &train_set, dev_set.as_deref())?;

    let ckpt_path = out_dir.join("model.ckpt");
    save_checkpoint(&ckpt_path, &model)?;
    let mut log = String::from(TrainLogRow::csv_header());
    log.push('\n');
    for row in &outcome.log {
        log.push_str(&row.to_csv());
        log.push('\n');
    }
    std::fs::write(out_dir.join("train_log.csv"), log)?;

    println!(
        "trained {} steps over {} epochs; train F1 {:.4}{}",
        outcome.steps_run,
        outcome.epochs_run,
        outcome.final_train_f1,
        outcome
            .best_dev_f1
            .map(|f| format!("; best dev F1 {f:.4}"))
            .unwrap_or_default()
    );
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────

#[derive(Debug, Args, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Override the checkpoint's task for scoring.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub contextual: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let out_dir = resolve_out(&args.out);
    let mut model = load_checkpoint(&args.model)?;
    if let Some(task) = args.task {
        if task != model.config.task {
            return Err(CliError::Data(format!(
                "checkpoint was trained for task {} but --task {task} was requested",
                model.config.task
            )));
        }
    }
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        command: "eval".into(),
        config: model.config.clone(),
        train_path: None,
        dev_path: None,
        data_path: Some(args.data.display().to_string()),
        model_path: Some(args.model.display().to_string()),
        glove_path: None,
        contextual_path: path_str(&args.contextual),
        dev_contextual_path: None,
        out_dir: out_dir.display().to_string(),
    };
    manifest.write(&out_dir)?;

    let mut examples = parse_dataset(&args.data, model.config.task)?;
    if let Some(ctx) = &args.contextual {
        let width = load_contextual(ctx, &mut examples)?;
        if model.config.plm_dim != Some(width) {
            return Err(CliError::Data(format!(
                "checkpoint expects contextual dim {:?} but file provides {width}",
                model.config.plm_dim
            )));
        }
    } else if model.config.plm_dim.is_some() {
        return Err(CliError::Data(format!(
            "checkpoint expects contextual vectors of dim {:?}; pass --contextual",
            model.config.plm_dim
        )));
    }
    model.config.normalize();

    let report = evaluate(&model, &examples)?;
    print!("{}", report.to_table());
    std::fs::write(out_dir.join("eval_report.csv"), report.to_csv())?;
    Ok(())
}

// ── predict ──────────────────────────────────────────────────────────

#[derive(Debug, Args, Clone)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub contextual: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn render_gold(tokens: &[String], gold: &Gold) -> String {
    let span_text = |s: &crate::tagging::Span| tokens[s.start..=s.end].join(" ");
    match gold {
        Gold::Triplets(ts) => ts
            .iter()
            .map(|t| format!("({}, {}, {})", span_text(&t.aspect), span_text(&t.opinion), t.polarity))
            .collect::<Vec<_>>()
            .join("  "),
        Gold::AspectPolarities { aspects, opinions } => {
            let mut parts: Vec<String> =
                aspects.iter().map(|(s, p)| format!("({}, {p})", span_text(s))).collect();
            parts.extend(opinions.iter().map(|s| format!("[{}]", span_text(s))));
            parts.join("  ")
        }
    }
}

pub fn run_predict(args: PredictArgs) -> Result<(), CliError> {
    let out_dir = resolve_out(&args.out);
    let model = load_checkpoint(&args.model)?;
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        command: "predict".into(),
        config: model.config.clone(),
        train_path: None,
        dev_path: None,
        data_path: Some(args.data.display().to_string()),
        model_path: Some(args.model.display().to_string()),
        glove_path: None,
        contextual_path: path_str(&args.contextual),
        dev_contextual_path: None,
        out_dir: out_dir.display().to_string(),
    };
    manifest.write(&out_dir)?;

    let mut examples = parse_dataset(&args.data, model.config.task)?;
    if let Some(ctx) = &args.contextual {
        load_contextual(ctx, &mut examples)?;
    }
    for ex in &examples {
        let pred = model.predict(ex)?;
        println!("{}", ex.tokens.join(" "));
        println!("  -> {}", render_gold(&ex.tokens, &pred));
    }
    Ok(())
}

// ── check ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CheckMode {
    /// decode(encode(gold)) == gold over a dataset.
    Gridroundtrip,
    /// Finite-difference gradient check on the micro model.
    Gradcheck,
    /// Wavefront vs naive 2D-GRU equivalence.
    MdgruEquiv,
}

#[derive(Debug, Args, Clone)]
pub struct CheckArgs {
    #[arg(long, value_enum)]
    pub mode: CheckMode,
    /// Dataset for the grid round-trip mode.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "aste")]
    pub task: Task,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_check(args: CheckArgs) -> Result<(), CliError> {
    let out_dir = resolve_out(&args.out);
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        command: "check".into(),
        config: ModelConfig { task: args.task, ..ModelConfig::default() },
        train_path: None,
        dev_path: None,
        data_path: path_str(&args.data),
        model_path: None,
        glove_path: None,
        contextual_path: None,
        dev_contextual_path: None,
        out_dir: out_dir.display().to_string(),
    };
    manifest.write(&out_dir)?;

    match args.mode {
        CheckMode::Gridroundtrip => {
            let data = args
                .data
                .ok_or_else(|| CliError::Usage("--data is required for gridroundtrip".into()))?;
            let examples = parse_dataset(&data, args.task)?;
            let stats = grid_roundtrip(&examples, args.task);
            println!(
                "examples {}  conflicts {}  mismatches {}",
                examples.len(),
                stats.conflicts.len(),
                stats.mismatches
            );
            for (id, err) in &stats.conflicts {
                println!("  conflict in example {id}: {err}");
            }
            if stats.mismatches > 0 {
                return Err(CliError::Data(format!("{} round-trip mismatches", stats.mismatches)));
            }
        }
        CheckMode::Gradcheck => {
            let report = micro_grad_check()?;
            println!("{report}");
            if !report.pass {
                return Err(CliError::Data("gradient check failed".into()));
            }
        }
        CheckMode::MdgruEquiv => {
            let max_dev = mdgru_equivalence_sweep(20);
            println!("max |wavefront - naive| over n in 1..=6: {max_dev:.3e}");
            let invariant = worker_invariance(64);
            println!("worker invariance at n=64 (1 vs 4 workers): {}", if invariant { "exact" } else { "VIOLATED" });
            if max_dev > 1e-12 || !invariant {
                return Err(CliError::Data("recurrence equivalence failed".into()));
            }
        }
    }
    Ok(())
}

pub struct RoundtripStats {
    pub conflicts: Vec<(usize, String)>,
    pub mismatches: usize,
}

/// Encode/decode every example; conflicts are enumerated, never skipped
/// silently. A mismatch is a conflict-free example whose decode differs.
pub fn grid_roundtrip(examples: &[Example], task: Task) -> RoundtripStats {
    let mut stats = RoundtripStats { conflicts: Vec::new(), mismatches: 0 };
    for ex in examples {
        let grid = match encode_grid(ex.n(), &ex.gold) {
            Ok(grid) => grid,
            Err(e) => {
                stats.conflicts.push((ex.id, e.to_string()));
                continue;
            }
        };
        let repair = crate::config::BioRepair::OrphanToBegin;
        let decoded = match task {
            Task::Aste => {
                let mut ts = decode_aste(&grid, repair);
                ts.sort_unstable();
                match &ex.gold {
                    Gold::Triplets(want) => {
                        let mut want = want.clone();
                        want.sort_unstable();
                        ts != want
                    }
                    _ => true,
                }
            }
            Task::Aesc => {
                let (mut aspects, mut opinions) = decode_aesc(&grid, None, repair);
                aspects.sort_unstable();
                opinions.sort_unstable();
                match &ex.gold {
                    Gold::AspectPolarities { aspects: wa, opinions: wo } => {
                        let mut wa = wa.clone();
                        wa.sort_unstable();
                        let mut wo = wo.clone();
                        wo.sort_unstable();
                        aspects != wa || opinions != wo
                    }
                    _ => true,
                }
            }
        };
        if decoded {
            stats.mismatches += 1;
            log::warn!("round-trip mismatch in example {}", ex.id);
        }
    }
    stats
}

/// The micro configuration pinned for gradient checking: 6 tokens, d=8,
/// 2 heads, 2 layers, pair hidden 4, quad scans, dropout off.
pub fn micro_grad_check() -> Result<crate::tensor::GradCheckReport, CliError> {
    let cfg = ModelConfig {
        task: Task::Aste,
        seed: 20,
        word_dim: 8,
        char_emb_dim: 4,
        char_out_dim: 8,
        hidden_dim: 8,
        n_heads: 2,
        n_layers: 2,
        pair_dim: Some(8),
        pair_hidden: 4,
        directions: DirectionMode::Quad,
        dropout: 0.0,
        max_len: 8,
        ..ModelConfig::default()
    };
    let text = "The screen is bright and crisp####[([1], [3], 'POS'), ([1], [5], 'POS')]";
    let examples = crate::data::parse_dataset_str(text, "micro", Task::Aste)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let ex = examples.into_iter().next().expect("one example");
    let grid = encode_grid(ex.n(), &ex.gold).map_err(|e| CliError::Data(e.to_string()))?;

    let vocab = Vocab::build(std::iter::once(ex.tokens.as_slice()));
    let seed = SeedRng::new(cfg.seed);
    let word_table = random_word_table(cfg.word_dim, &vocab, &seed);
    let model = Model::new(cfg, vocab, word_table).map_err(|e| CliError::Data(e.to_string()))?;

    let mut params = model.params.clone();
    let mask = vec![true; ex.n()];
    let report = grad_check(&mut params, 1e-5, 1e-4, |store, g| {
        // bind the (possibly perturbed) probe store, not the original model's
        let probe = Model {
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            word_table: model.word_table.clone(),
            params: store.clone(),
        };
        let mut rng = SeedRng::new(0).split("unused");
        let out = probe.forward_masked(g, &ex, &mask, false, &mut rng).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => panic!("{other}"),
        })?;
        let loss = training::joint_loss(g, &probe.config, &out, &grid, &mask)?;
        Ok((loss.total, out.binds))
    })
    .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(report)
}

/// Max |wavefront - naive| over all n in 1..=6, all four scans, `seeds`
/// random weight/input draws each.
pub fn mdgru_equivalence_sweep(seeds: u64) -> Real {
    use rand::Rng;
    let mut max_dev: Real = 0.0;
    for n in 1..=6usize {
        for seed in 0..seeds {
            for (di, dir) in
                [ScanDir::DownRight, ScanDir::UpLeft, ScanDir::DownLeft, ScanDir::UpRight]
                    .into_iter()
                    .enumerate()
            {
                let root = SeedRng::new(seed).split_indexed("equiv", (n * 10 + di) as u64);
                let mut rng = root;
                let w = GruDirWeights::random(5, 3, &mut rng);
                let s: Vec<Real> = (0..n * n * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let prev: Vec<Real> = (0..n * n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let naive = mdgru_naive(&w, &s, Some(&prev), n, dir, None);
                let wf = mdgru_wavefront(&w, &s, Some(&prev), n, dir, None, 4);
                for (a, b) in naive.iter().zip(&wf) {
                    max_dev = max_dev.max((a - b).abs());
                }
            }
        }
    }
    max_dev
}

/// Bitwise equality between 1-worker and 4-worker evaluation.
pub fn worker_invariance(n: usize) -> bool {
    use rand::Rng;
    let mut rng = SeedRng::new(7).split("invariance");
    let w = GruDirWeights::random(8, 6, &mut rng);
    let s: Vec<Real> = (0..n * n * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let one = mdgru_wavefront(&w, &s, None, n, ScanDir::DownRight, None, 1);
    let four = mdgru_wavefront(&w, &s, None, n, ScanDir::DownRight, None, 4);
    one.iter().zip(&four).all(|(a, b)| a.to_bits() == b.to_bits())
}

// ── bench ────────────────────────────────────────────────────────────

#[derive(Debug, Args, Clone)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long, default_value = "quad")]
    pub directions: DirectionMode,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.n < 1 || args.workers < 1 {
        return Err(CliError::Usage("--n and --workers must be >= 1".into()));
    }
    let out_dir = resolve_out(&args.out);
    let cfg = ModelConfig { directions: args.directions, ..ModelConfig::default() };
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        command: "bench".into(),
        config: cfg.clone(),
        train_path: None,
        dev_path: None,
        data_path: None,
        model_path: None,
        glove_path: None,
        contextual_path: None,
        dev_contextual_path: None,
        out_dir: out_dir.display().to_string(),
    };
    manifest.write(&out_dir)?;

    use rand::Rng;
    let n = args.n;
    let d_in = cfg.pair_input_dim();
    let h = cfg.pair_hidden;
    let mut csv = String::from("n,mode,direction,workers,sequential_ms,wavefront_ms,speedup,max_deviation\n");
    println!("n={n} mode={} workers={}", cfg.directions, args.workers);
    for (di, dir) in ScanDir::for_mode(cfg.directions).iter().enumerate() {
        let mut rng = SeedRng::new(3).split_indexed("bench", di as u64);
        let w = GruDirWeights::random(d_in, h, &mut rng);
        let s: Vec<Real> = (0..n * n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let t0 = Instant::now();
        let seq = mdgru_naive(&w, &s, None, n, *dir, None);
        let seq_ms = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        let wf = mdgru_wavefront(&w, &s, None, n, *dir, None, args.workers);
        let wf_ms = t1.elapsed().as_secs_f64() * 1e3;

        let max_dev =
            seq.iter().zip(&wf).map(|(a, b)| (a - b).abs()).fold(0.0 as Real, Real::max);
        if max_dev > 1e-12 {
            return Err(CliError::Data(format!(
                "wavefront/sequential outputs diverge ({max_dev:.3e}); timings suppressed"
            )));
        }
        let speedup = if args.workers == 1 { 1.0 } else { seq_ms / wf_ms };
        println!(
            "  {dir:?}: sequential {seq_ms:.2} ms, wavefront {wf_ms:.2} ms, speedup {speedup:.2}, max dev {max_dev:.1e}"
        );
        csv.push_str(&format!(
            "{n},{},{dir:?},{},{seq_ms:.4},{wf_ms:.4},{speedup:.4},{max_dev:.3e}\n",
            cfg.directions, args.workers
        ));
    }
    std::fs::write(out_dir.join("bench.csv"), csv)?;
    Ok(())
}
