//! Joint aspect/opinion extraction and sentiment classification via span-level
//! grid tagging, with a dual encoder: a Transformer sequence encoder for the
//! diagonal (BIO term tags) and a multi-directional 2D-GRU pair encoder for the
//! upper triangle (pair polarities). Everything runs on a small reverse-mode
//! autodiff tape; no external tensor framework.
//!
//! See the `examples/` directory for one runnable program per capability
//! (training, evaluation, prediction, grid round-trip, gradient checking,
//! wavefront benchmarking), or the `sentigrid` binary for the same entry
//! points as subcommands.

pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod eval;
pub mod model;
pub mod pair_encoder;
pub mod params;
pub mod rng;
pub mod seq_encoder;
pub mod tagging;
pub mod tensor;
pub mod training;

pub use config::{DirectionMode, ModelConfig, Task};
pub use model::Model;
pub use tensor::{Graph, NodeId, Real, Tensor, TensorError};
