//! Figures of merit computed from decoder predictions: per-cycle logical
//! error rates with credible intervals, Λ and power-law fits, minimal
//! failure-mode censuses, calibration and post-selection curves.

mod calibration;
mod census;
mod fits;
mod rates;

pub use calibration::{per_cycle_discard, DEFAULT_BINS, post_select, reliability, CalibrationBin, CalibrationReport, PostSelectionPoint};
pub use census::{enumerate_minimal_failure_modes, predicted_pl, FailureModeCensus, DEFAULT_BUDGET};
pub use fits::{
    fit_lambda, fit_suppression_exponent, fit_two_powerlaw, FitKind, FitResult, LambdaPoint, PowerPoint,
    REFERENCE_LAMBDA, REFERENCE_SATURATED_EXPONENT, REFERENCE_WATERFALL_EXPONENTS,
};
pub use rates::{
    block_error_rate, block_error_rate_extended, credible_interval, per_cycle_error_rate, per_cycle_error_rate_clamped,
    per_cycle_error_rate_extended, read_curve, write_curve,
    ErrorRatePoint,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("block error rate {0} is outside the invertible range for k = {1}")]
    Domain(f64, usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{0} needs at least {1} points")]
    TooFewPoints(&'static str, usize),
    #[error("non-positive error rate {0} cannot be fitted in log space")]
    NonPositive(f64),
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Decoder(#[from] crate::decoders::DecoderError),
}
