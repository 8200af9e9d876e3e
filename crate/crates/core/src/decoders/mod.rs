//! Reference decoders: exhaustive maximum likelihood for tiny codes, a
//! minimum-weight lookup table and product-sum belief propagation.
//!
//! Memory-experiment decoders work on one error type. A `basis`-memory
//! experiment is decoded from the syndrome of the `basis`-type checks, and its
//! observables are the `basis`-type logicals, so the relevant errors are those
//! of the opposite Pauli type.

mod bp;
mod lookup;
mod ml;

pub use bp::{BpDecoder, BpOutput, DEFAULT_ITERATIONS};
pub use lookup::{next_combination, LookupDecoder};
pub use ml::{ExactMl, MAX_FULL_QUBITS, MAX_MEMORY_QUBITS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::{BinaryMatrix, CssCode};
use crate::sim::{Basis, SyndromeBatch};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("{what} needs at most {limit} {unit}, got {got}")]
    TooLarge {
        what: &'static str,
        limit: usize,
        unit: &'static str,
        got: usize,
    },
    #[error("syndrome not covered by the lookup table")]
    UnknownSyndrome,
    #[error("syndrome has {got} bits, expected {expected}")]
    Syndrome { expected: usize, got: usize },
    #[error("probability {0} outside (0, 1/2)")]
    Probability(f64),
    #[error("batch does not match the decoder: {0}")]
    Batch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Predicted flip of every observable.
    pub flips: Vec<bool>,
    /// Posterior probability of each observable flipping (exact ML only).
    pub confidence: Option<Vec<f64>>,
    /// Whether the iteration reproduced the syndrome (BP only).
    pub converged: Option<bool>,
    pub iterations: usize,
}

pub trait Decoder: Sync {
    /// Decodes one syndrome of the decoder's check type.
    fn decode(&self, syndrome: &[bool]) -> Result<DecodeResult, DecoderError>;

    /// Checks whose syndrome the decoder consumes, as global check indices.
    fn checks(&self) -> &[usize];
}

/// Parity-check matrix, logicals and check indices of the decoding problem
/// posed by a `basis`-memory experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeProblem {
    pub h: BinaryMatrix,
    pub logicals: BinaryMatrix,
    pub checks: Vec<usize>,
}

impl TypeProblem {
    pub fn new(code: &CssCode, basis: Basis) -> Self {
        let h = code.checks_of(basis).clone();
        let checks = (0..h.rows()).map(|i| code.check_index(basis, i)).collect();
        Self {
            h,
            logicals: code.logicals_of(basis).clone(),
            checks,
        }
    }

    pub fn n(&self) -> usize {
        self.h.cols()
    }

    pub fn syndrome(&self, error: &[usize]) -> Vec<bool> {
        let packed = crate::codes::gf2::pack(self.n(), error);
        (0..self.h.rows()).map(|r| crate::codes::gf2::dot(self.h.row(r), &packed)).collect()
    }

    pub fn flips(&self, error: &[usize]) -> Vec<bool> {
        let packed = crate::codes::gf2::pack(self.n(), error);
        (0..self.logicals.rows())
            .map(|r| crate::codes::gf2::dot(self.logicals.row(r), &packed))
            .collect()
    }
}

/// Per-qubit probability that a depolarizing channel of strength `p` flips a
/// given measurement basis.
pub fn marginal_flip(p: f64) -> f64 {
    2.0 * p / 3.0
}

/// Syndrome of the decoder's checks for one shot: the XOR over all rounds of
/// the detection events on those checks. With perfect measurements this is
/// the syndrome of the accumulated error.
pub fn shot_syndrome(batch: &SyndromeBatch, shot: usize, checks: &[usize]) -> Vec<bool> {
    checks
        .iter()
        .map(|&c| (0..batch.rounds).fold(false, |acc, r| acc ^ batch.detection(shot, r, c)))
        .collect()
}

/// Decodes every shot of a batch; returns the results in shot order.
pub fn decode_batch(decoder: &dyn Decoder, batch: &SyndromeBatch) -> Result<Vec<DecodeResult>, DecoderError> {
    use rayon::prelude::*;
    if decoder.checks().iter().any(|&c| c >= batch.checks_per_round) {
        return Err(DecoderError::Batch("check index beyond the batch's check count".into()));
    }
    (0..batch.shots)
        .into_par_iter()
        .map(|s| decoder.decode(&shot_syndrome(batch, s, decoder.checks())))
        .collect()
}

/// Fraction of shots where any predicted flip differs from the label.
pub fn block_error_rate(results: &[DecodeResult], batch: &SyndromeBatch) -> f64 {
    let failures = results
        .iter()
        .enumerate()
        .filter(|(s, r)| r.flips != batch.shot_labels(*s))
        .count();
    failures as f64 / batch.shots.max(1) as f64
}
