//! Toy causal decoder with low-rank adapters, its training loop, checkpoint
//! format and a greedy responder for exam evaluation.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod generate;
pub mod gradcheck;
pub mod loss;
pub mod lora;
pub mod model;
pub mod optim;
pub mod real;
pub mod trainer;
pub mod vocab;

pub use config::{ModelConfig, Projection, ProjectionSet};
pub use error::{ModelError, Result};
pub use model::{Grads, Model, Param, ParamId, ParamKind};
pub use real::Real;
pub use vocab::Vocab;
pub use checkpoint::{Checkpoint, Phase};
pub use generate::GreedyResponder;
pub use trainer::TrainConfig;
