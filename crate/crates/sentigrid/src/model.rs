//! The full dual-encoder model: token representation feeding a sequence
//! encoder (diagonal term tags) and a pair encoder (upper-triangle
//! polarities), interconnected per layer when interaction is on.
//!
//! Per layer l (1-based), with `S~_0` the token representation:
//!   `S_l  = SeqLayer_l(S~_{l-1})`
//!   `S'_l = PairInit_l([S~_{l-1,i}; S~_{l-1,j}])`
//!   `P_l  = MDGRU_l(S'_l, P_{l-1})`
//!   `S~_l = S_l + pool(P_l)` when interaction is on, else `S_l`
//! The term head reads `S~_L`, the pair heads read `P_L`.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ModelConfig, Task};
use crate::data::Example;
use crate::embedding::{self, EmbedError, Vocab};
use crate::pair_encoder;
use crate::params::{Bindings, ParamStore};
use crate::rng::SeedRng;
use crate::seq_encoder;
use crate::tagging::{
    decode_aesc, decode_aste, upper_cells, GridScores, Gold, PairLabel, TagGrid, TermTag,
};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};
use crate::training;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Node handles produced by one forward pass.
pub struct ForwardOutputs {
    pub binds: Bindings,
    /// `[n x 5]` term-tag logits.
    pub term_logits: NodeId,
    /// `[cells x 4]` polarity logits over the packed strict upper triangle;
    /// absent without a pair encoder or when n < 2.
    pub pair_logits: Option<NodeId>,
    /// `[n x 4]` per-token polarity logits (aspect-polarity task only).
    pub diag_polarity_logits: Option<NodeId>,
    /// Final (interaction-augmented) sequence state, `[n x d]`.
    pub seq_final: NodeId,
    /// Final pair grid, `[n^2 x h_p]`.
    pub pair_final: Option<NodeId>,
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    /// Frozen word-embedding table (`|V| x word_dim`); never updated.
    pub word_table: Tensor,
    pub params: ParamStore,
}

impl Model {
    /// Initialize all trainable parameters from the config's seed.
    pub fn new(mut config: ModelConfig, vocab: Vocab, word_table: Tensor) -> Result<Model, ModelError> {
        config.normalize();
        config.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        let seed = SeedRng::new(config.seed);
        let mut params = ParamStore::new();
        embedding::init_params(&config, vocab.n_chars(), &mut params, &seed);
        seq_encoder::init_params(&config, &mut params, &seed);
        pair_encoder::init_params(&config, &mut params, &seed);
        training::init_head_params(&config, &mut params, &seed);
        Ok(Model { config, vocab, word_table, params })
    }

    pub fn seed(&self) -> SeedRng {
        SeedRng::new(self.config.seed)
    }

    /// Forward pass over one example. `mask[i]` marks real tokens; the
    /// example's own tokens are all real, entries beyond `ex.n()` pad.
    pub fn forward(
        &self,
        g: &mut Graph,
        ex: &Example,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardOutputs, ModelError> {
        let mask = vec![true; ex.n()];
        self.forward_masked(g, ex, &mask, training, rng)
    }

    pub fn forward_masked(
        &self,
        g: &mut Graph,
        ex: &Example,
        mask: &[bool],
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardOutputs, ModelError> {
        let cfg = &self.config;
        let n = ex.n();
        assert_eq!(mask.len(), n, "one mask flag per token");

        let binds = self.params.bind_all(g);
        let x = embedding::token_representation(g, &binds, cfg, &self.vocab, &self.word_table, ex)?;

        let mut s_tilde = x;
        let mut p_prev: Option<NodeId> = None;
        for l in 0..cfg.n_layers {
            let s_l = seq_encoder::encode_layer(g, &binds, cfg, l, s_tilde, mask, training, rng)?;
            if cfg.use_pair_encoder {
                let s_prime = pair_encoder::pair_init(g, &binds, l, s_tilde)?;
                let p_l = pair_encoder::mdgru_multi_tape(g, &binds, cfg, l, s_prime, p_prev, n, mask)?;
                s_tilde = if cfg.use_interaction {
                    pair_encoder::interaction(g, &binds, cfg, l, p_l, s_l, n, mask)?
                } else {
                    s_l
                };
                p_prev = Some(p_l);
            } else {
                s_tilde = s_l;
            }
        }

        let term_logits = training::term_head(g, &binds, s_tilde)?;
        let pair_logits = match p_prev {
            Some(p) if n >= 2 => Some(training::pair_head(g, &binds, p, n)?),
            _ => None,
        };
        let diag_polarity_logits = match (cfg.task, p_prev) {
            (Task::Aesc, Some(p)) => Some(training::diag_polarity_head(g, &binds, p, n)?),
            _ => None,
        };

        Ok(ForwardOutputs {
            binds,
            term_logits,
            pair_logits,
            diag_polarity_logits,
            seq_final: s_tilde,
            pair_final: p_prev,
        })
    }

    /// Decode predictions for one example (eval mode, deterministic).
    pub fn predict(&self, ex: &Example) -> Result<Gold, ModelError> {
        let mut g = Graph::new();
        let mut rng = self.seed().split("predict");
        let out = self.forward(&mut g, ex, false, &mut rng)?;
        let n = ex.n();

        let mut grid = TagGrid::empty(n, self.config.task == Task::Aesc);
        for (i, row) in g.value(out.term_logits).data().chunks(TermTag::COUNT).enumerate() {
            grid.diag_mut()[i] = TermTag::from_index(argmax(row));
        }
        let mut scores = None;
        if let Some(pl) = out.pair_logits {
            let data = g.value(pl).data();
            for (k, row) in data.chunks(PairLabel::COUNT).enumerate() {
                grid.pairs_mut()[k] = PairLabel::from_index(argmax(row));
            }
            scores = Some(GridScores { pair: data.to_vec(), diag_polarity: None });
        }
        if let Some(dl) = out.diag_polarity_logits {
            let data = g.value(dl).data();
            if let Some(diag) = grid.diag_polarity_mut() {
                for (i, row) in data.chunks(PairLabel::COUNT).enumerate() {
                    diag[i] = PairLabel::from_index(argmax(row));
                }
            }
            scores = Some(GridScores {
                pair: scores.map(|s| s.pair).unwrap_or_default(),
                diag_polarity: Some(data.to_vec()),
            });
        }

        Ok(match self.config.task {
            Task::Aste => Gold::Triplets(decode_aste(&grid, self.config.bio_repair)),
            Task::Aesc => {
                let (aspects, opinions) =
                    decode_aesc(&grid, scores.as_ref(), self.config.bio_repair);
                Gold::AspectPolarities { aspects, opinions }
            }
        })
    }

    /// Predictions for a whole corpus, in example order.
    pub fn predict_corpus(&self, examples: &[Example]) -> Result<Vec<Gold>, ModelError> {
        use rayon::prelude::*;
        examples.par_iter().map(|ex| self.predict(ex)).collect()
    }
}

/// Row indices of the packed strict upper triangle within an `[n^2 x c]` grid.
pub fn upper_row_indices(n: usize) -> Vec<usize> {
    upper_cells(n).map(|(i, j)| i * n + j).collect()
}

fn argmax(row: &[crate::tensor::Real]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::DirectionMode;
    use crate::data::parse_dataset_str;

    pub(crate) fn toy_corpus() -> Vec<Example> {
        let text = "\
Great screen and fast startup .####[([1], [0], 'POS'), ([4], [3], 'POS')]
The fan is horribly loud .####[([1], [3, 4], 'NEG')]
The price is acceptable .####[([1], [3], 'NEU')]
";
        parse_dataset_str(text, "mem", Task::Aste).unwrap()
    }

    pub(crate) fn micro_model(task: Task) -> Model {
        let examples = toy_corpus();
        let vocab = Vocab::build(examples.iter().map(|e| e.tokens.as_slice()));
        let cfg = ModelConfig {
            task,
            seed: 17,
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
            max_len: 16,
            ..ModelConfig::default()
        };
        let word_table = embedding::random_word_table(cfg.word_dim, &vocab, &SeedRng::new(cfg.seed));
        Model::new(cfg, vocab, word_table).unwrap()
    }

    #[test]
    fn forward_shapes() {
        let model = micro_model(Task::Aste);
        let examples = toy_corpus();
        let mut g = Graph::new();
        let mut rng = model.seed().split("t");
        let out = model.forward(&mut g, &examples[0], false, &mut rng).unwrap();
        let n = examples[0].n();
        assert_eq!(g.value(out.term_logits).shape(), &[n, 5]);
        let cells = n * (n - 1) / 2;
        assert_eq!(g.value(out.pair_logits.unwrap()).shape(), &[cells, 4]);
        assert!(out.diag_polarity_logits.is_none(), "no diagonal polarity head for triplet task");
        assert_eq!(g.value(out.pair_final.unwrap()).shape(), &[n * n, model.config.pair_channels()]);
    }

    #[test]
    fn aesc_task_has_diag_polarity_head() {
        let model = micro_model(Task::Aesc);
        let examples = toy_corpus();
        let mut g = Graph::new();
        let mut rng = model.seed().split("t");
        let out = model.forward(&mut g, &examples[1], false, &mut rng).unwrap();
        assert_eq!(g.value(out.diag_polarity_logits.unwrap()).shape(), &[examples[1].n(), 4]);
    }

    #[test]
    fn no_pair_encoder_means_no_pair_params_or_logits() {
        let examples = toy_corpus();
        let vocab = Vocab::build(examples.iter().map(|e| e.tokens.as_slice()));
        let mut cfg = micro_model(Task::Aste).config.clone();
        cfg.use_pair_encoder = false;
        let word_table = embedding::random_word_table(cfg.word_dim, &vocab, &SeedRng::new(cfg.seed));
        let model = Model::new(cfg, vocab, word_table).unwrap();
        assert!(model.params.names().all(|n| !n.starts_with("pair.") && !n.starts_with("interact.")));
        let mut g = Graph::new();
        let mut rng = model.seed().split("t");
        let out = model.forward(&mut g, &examples[0], false, &mut rng).unwrap();
        assert!(out.pair_logits.is_none());
        assert!(out.pair_final.is_none());
        // diagonal-only model still predicts spans, never triplets
        match model.predict(&examples[0]).unwrap() {
            Gold::Triplets(ts) => assert!(ts.is_empty()),
            _ => panic!("triplet task yields a triplet set"),
        }
    }

    #[test]
    fn interaction_flag_changes_term_logits() {
        let examples = toy_corpus();
        let base = micro_model(Task::Aste);
        let vocab = Vocab::build(examples.iter().map(|e| e.tokens.as_slice()));
        let mut cfg = base.config.clone();
        cfg.use_interaction = false;
        let word_table =
            embedding::random_word_table(cfg.word_dim, &vocab, &SeedRng::new(cfg.seed));
        let without = Model::new(cfg, vocab, word_table).unwrap();

        let logits = |m: &Model| {
            let mut g = Graph::new();
            let mut rng = m.seed().split("t");
            let out = m.forward(&mut g, &examples[0], false, &mut rng).unwrap();
            g.value(out.term_logits).data().to_vec()
        };
        assert_ne!(logits(&base), logits(&without));
    }

    #[test]
    fn padding_invariance_full_model() {
        // appending PAD tokens leaves real-position logits unchanged
        let model = micro_model(Task::Aste);
        let examples = toy_corpus();
        let ex = &examples[2];
        let n = ex.n();

        let mut g = Graph::new();
        let mut rng = model.seed().split("t");
        let out = model.forward(&mut g, ex, false, &mut rng).unwrap();
        let base_term = g.value(out.term_logits).data().to_vec();

        let mut padded = ex.clone();
        padded.tokens.push("<pad>".into());
        padded.tokens.push("<pad>".into());
        let mut mask = vec![true; n];
        mask.extend([false, false]);
        let mut g2 = Graph::new();
        let mut rng2 = model.seed().split("t");
        let out2 = model.forward_masked(&mut g2, &padded, &mask, false, &mut rng2).unwrap();
        let padded_term = &g2.value(out2.term_logits).data()[..n * 5];

        for (a, b) in base_term.iter().zip(padded_term) {
            assert!((a - b).abs() <= 1e-8, "diff {}", (a - b).abs());
        }
    }

    #[test]
    fn forward_deterministic_in_eval_mode() {
        let model = micro_model(Task::Aste);
        let examples = toy_corpus();
        let run = || {
            let mut g = Graph::new();
            let mut rng = model.seed().split("x");
            let out = model.forward(&mut g, &examples[0], false, &mut rng).unwrap();
            g.value(out.term_logits).data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
