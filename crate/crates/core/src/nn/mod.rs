//! The decoder network with exact reverse-mode gradients.
//!
//! Activations are row-major `[rows × channels]` matrices with rows ordered
//! `(shot, round, position)`. Every op has a hand-written backward pass; the
//! model is generic over the scalar type so gradients can be checked in
//! double precision while training runs in single precision.

mod checkpoint;
mod geometry;
mod gradcheck;
mod model;
pub mod ops;
pub mod real;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use geometry::{ConvGraph, Geometry};
pub use gradcheck::{check_gradients, GradCheckReport, GroupCheck};
pub use model::{Cache, ConvVariant, Gradients, Mode, Model, ModelConfig, Param, Role};
pub use real::Real;

use thiserror::Error;

use crate::codes::CodeError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("backward needs a train-mode forward pass")]
    Mode,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests;
