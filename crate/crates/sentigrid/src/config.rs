//! Model and training configuration.
//!
//! Defaults are the published hyperparameters (hidden 200, token 100, char 30,
//! clip 5.0, batch 24, Adam at 1e-3, dropout 0.5, decay 0.05/1000, 3 layers,
//! 8 heads, quad-directional pair encoder); every ablation is one flag away.
//! Config files are flat `key = value` lines; CLI flags override them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Real;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: cannot parse config line: {text}")]
    BadLine { path: String, line: usize, text: String },
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("bad value {value} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Aste,
    Aesc,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Aste => "aste",
            Task::Aesc => "aesc",
        })
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aste" => Ok(Task::Aste),
            "aesc" => Ok(Task::Aesc),
            other => Err(format!("unknown task {other}, expected aste|aesc")),
        }
    }
}

/// How many corners the pair grid is scanned from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionMode {
    Uni,
    Bi,
    Quad,
}

impl DirectionMode {
    pub fn scan_count(self) -> usize {
        match self {
            DirectionMode::Uni => 1,
            DirectionMode::Bi => 2,
            DirectionMode::Quad => 4,
        }
    }
}

impl fmt::Display for DirectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DirectionMode::Uni => "uni",
            DirectionMode::Bi => "bi",
            DirectionMode::Quad => "quad",
        })
    }
}

impl FromStr for DirectionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uni" => Ok(DirectionMode::Uni),
            "bi" => Ok(DirectionMode::Bi),
            "quad" => Ok(DirectionMode::Quad),
            other => Err(format!("unknown direction mode {other}, expected uni|bi|quad")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfnActivation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    /// `lr0 / (1 + rate * step / steps)`
    InverseTime,
    /// `lr0 * rate^(step / steps)`
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BioRepair {
    /// Orphan I-x is read as B-x (recall-maximizing).
    OrphanToBegin,
    /// Orphan I-x is dropped (read as O).
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub seed: u64,

    // token representation
    pub word_dim: usize,
    pub use_char: bool,
    pub char_emb_dim: usize,
    /// Concatenated forward+backward char encoder output.
    pub char_out_dim: usize,
    /// Contextual-vector width; set when a vector file is attached.
    pub plm_dim: Option<usize>,
    /// Model dim d; token representations are projected here.
    pub hidden_dim: usize,
    pub positional: bool,
    pub max_len: usize,

    // sequence encoder
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_inner_dim: Option<usize>, // default d / n_heads
    pub ffn_activation: FfnActivation,
    pub layer_norm_eps: Real,

    // pair encoder
    pub use_pair_encoder: bool,
    pub pair_dim: Option<usize>, // MLP output; default = hidden_dim
    pub pair_hidden: usize,      // per-direction GRU state
    pub directions: DirectionMode,
    pub share_direction_weights: bool,
    pub use_interaction: bool,

    // training
    pub dropout: Real,
    pub learning_rate: Real,
    pub lr_decay: LrDecay,
    pub decay_rate: Real,
    pub decay_steps: usize,
    pub clip_norm: Real,
    pub batch_size: usize,
    pub max_steps: usize,
    pub max_epochs: usize,
    /// Stop early once training-set F1 reaches this value.
    pub target_train_f1: Option<Real>,
    pub none_class_weight: Real,
    pub bio_repair: BioRepair,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            task: Task::Aste,
            seed: 42,
            word_dim: 100,
            use_char: true,
            char_emb_dim: 30,
            char_out_dim: 100,
            plm_dim: None,
            hidden_dim: 200,
            positional: true,
            max_len: 120,
            n_layers: 3,
            n_heads: 8,
            ffn_inner_dim: None,
            ffn_activation: FfnActivation::Relu,
            layer_norm_eps: 1e-5,
            use_pair_encoder: true,
            pair_dim: None,
            pair_hidden: 50,
            directions: DirectionMode::Quad,
            share_direction_weights: false,
            use_interaction: true,
            dropout: 0.5,
            learning_rate: 1e-3,
            lr_decay: LrDecay::InverseTime,
            decay_rate: 0.05,
            decay_steps: 1000,
            clip_norm: 5.0,
            batch_size: 24,
            max_steps: usize::MAX,
            max_epochs: 100,
            target_train_f1: None,
            none_class_weight: 1.0,
            bio_repair: BioRepair::OrphanToBegin,
        }
    }
}

impl ModelConfig {
    pub fn ffn_inner(&self) -> usize {
        self.ffn_inner_dim.unwrap_or_else(|| (self.hidden_dim / self.n_heads).max(1))
    }

    pub fn pair_input_dim(&self) -> usize {
        self.pair_dim.unwrap_or(self.hidden_dim)
    }

    /// Concatenated pair-grid channel count: h * (1|2|4) by direction mode.
    pub fn pair_channels(&self) -> usize {
        self.pair_hidden * self.directions.scan_count()
    }

    /// Token-representation width before projection.
    pub fn input_dim(&self) -> usize {
        let mut d = self.word_dim;
        if self.use_char {
            d += self.char_out_dim;
        }
        if let Some(p) = self.plm_dim {
            d += p;
        }
        d
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_layers == 0 {
            return Err(ConfigError::Invalid("n_layers must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.hidden_dim % self.n_heads != 0 {
            return Err(ConfigError::Invalid(format!(
                "hidden_dim {} must be positive and divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.learning_rate <= 0.0 {
            return Err(ConfigError::Invalid("learning_rate must be > 0".into()));
        }
        if self.use_char && self.char_out_dim % 2 != 0 {
            return Err(ConfigError::Invalid("char_out_dim must be even (two directions)".into()));
        }
        if self.pair_hidden == 0 && self.use_pair_encoder {
            return Err(ConfigError::Invalid("pair_hidden must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Pair-encoder off forces a diagonal-only model; interaction has nothing
    /// to read, so it is switched off rather than rejected.
    pub fn normalize(&mut self) {
        if !self.use_pair_encoder && self.use_interaction {
            log::info!("pair encoder disabled; interaction switched off");
            self.use_interaction = false;
        }
    }

    /// Load a flat `key = value` config file and apply it over `self`.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                path: path.display().to_string(),
                line: lineno + 1,
                text: raw.to_string(),
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply a single `key = value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        }
        match key {
            "task" => self.task = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "word_dim" => self.word_dim = parse(key, value)?,
            "use_char" => self.use_char = parse(key, value)?,
            "char_emb_dim" => self.char_emb_dim = parse(key, value)?,
            "char_out_dim" => self.char_out_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "positional" => self.positional = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "n_layers" => self.n_layers = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "ffn_inner_dim" => self.ffn_inner_dim = Some(parse(key, value)?),
            "ffn_activation" => {
                self.ffn_activation = match value {
                    "relu" => FfnActivation::Relu,
                    "none" => FfnActivation::None,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected relu|none".into(),
                        })
                    }
                }
            }
            "layer_norm_eps" => self.layer_norm_eps = parse(key, value)?,
            "use_pair_encoder" => self.use_pair_encoder = parse(key, value)?,
            "pair_dim" => self.pair_dim = Some(parse(key, value)?),
            "pair_hidden" => self.pair_hidden = parse(key, value)?,
            "directions" => self.directions = parse(key, value)?,
            "share_direction_weights" => self.share_direction_weights = parse(key, value)?,
            "use_interaction" => self.use_interaction = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lr_decay" => {
                self.lr_decay = match value {
                    "inverse_time" => LrDecay::InverseTime,
                    "exponential" => LrDecay::Exponential,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected inverse_time|exponential".into(),
                        })
                    }
                }
            }
            "decay_rate" => self.decay_rate = parse(key, value)?,
            "decay_steps" => self.decay_steps = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "target_train_f1" => self.target_train_f1 = Some(parse(key, value)?),
            "none_class_weight" => self.none_class_weight = parse(key, value)?,
            "bio_repair" => {
                self.bio_repair = match value {
                    "orphan_to_begin" => BioRepair::OrphanToBegin,
                    "drop" => BioRepair::Drop,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected orphan_to_begin|drop".into(),
                        })
                    }
                }
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}
