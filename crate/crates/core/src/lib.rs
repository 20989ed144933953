//! Separable prompt learning for face forgery detection on a frozen
//! dual vision–language encoder.
//!
//! The crate is organized bottom-up: a small reverse-mode [`autograd`] engine,
//! a frozen [`backend`] encoder with optional low-rank adapters, learnable
//! [`prompts`], cross-modal [`alignment`], the training objectives in
//! [`losses`], the assembled [`model`], the two-stage [`trainer`], [`data`]
//! loading and synthesis, and [`eval`] metrics, robustness and exports.

pub mod alignment;
pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod backend;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod optim;
pub mod params;
pub mod prompts;
pub mod trainer;

pub use autograd::{Graph, Tensor, Var};
pub use config::{Config, LossWeights, ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use model::Sepl;
pub use params::ParamStore;
