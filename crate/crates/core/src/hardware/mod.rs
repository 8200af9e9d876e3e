//! Deployment arithmetic: MAC counts per block variant, roofline latency,
//! on-chip buffer sizing, batch-norm folding and simulated FP8 inference.

mod cost;
mod fold;
mod fp8;

pub use cost::{
    buffer_sizing, mac_count, roofline_latency, BlockCostSpec, BlockVariant, BufferReport, MacBreakdown,
    RooflineSpec, RoundConvention,
};
pub use fold::{fold_batchnorm, fold_model, FoldReport};
pub use fp8::{quantize_model, quantize_slice, tensor_scale, Fp8, QuantizedModel, FP8_MAX};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HardwareError {
    #[error("invalid cost spec: {0}")]
    Spec(String),
    #[error("model is missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}
