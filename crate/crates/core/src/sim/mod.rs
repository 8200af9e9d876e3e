//! Memory-experiment circuits and Pauli-frame syndrome sampling.

mod batch;
mod circuit;
mod frame;
mod memory;

pub use batch::{check_positions, slice_shape, syndrome_to_tensor, SyndromeBatch};
pub use circuit::{Circuit, Instruction};
pub use frame::{fault_locations, propagate, sample, Fault, Injection, InjectionKind};
pub use memory::{build_memory_circuit, extraction_schedule};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::codes::CheckType as Basis;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("qubit {0} out of range")]
    Qubit(usize),
    #[error("record look-back references a measurement that has not happened")]
    Lookback,
    #[error("detector coordinates ({0}, {1}) outside the round/check grid")]
    Coordinates(usize, usize),
    #[error("observable {0} out of range")]
    Observable(usize),
    #[error("memory experiment needs at least one round")]
    NoRounds,
    #[error("no circuit-level extraction schedule for code {0:?}")]
    NoSchedule(String),
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("invalid noise spec {0:?}; expected data:<p>, phenom:<p>[:<q>] or circuit:<p>")]
    NoiseSpec(String),
    #[error("syndrome batch layout mismatch: {0}")]
    Layout(String),
    #[error("malformed syndrome batch file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Depolarizing noise on data qubits once per round, perfect readout.
    DataLevel,
    /// Data depolarizing plus measurement flips.
    Phenomenological,
    /// Uniform depolarizing noise on every gate, idle, reset and readout.
    CircuitLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub p: f64,
    /// Measurement-flip probability; used by the phenomenological model only.
    pub q: f64,
}

impl NoiseModel {
    pub fn data_level(p: f64) -> Self {
        Self { kind: NoiseKind::DataLevel, p, q: 0.0 }
    }

    pub fn phenomenological(p: f64, q: f64) -> Self {
        Self { kind: NoiseKind::Phenomenological, p, q }
    }

    pub fn circuit_level(p: f64) -> Self {
        Self { kind: NoiseKind::CircuitLevel, p, q: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for v in [self.p, self.q] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::Probability(v));
            }
        }
        Ok(())
    }
}

impl FromStr for NoiseModel {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        let err = || SimError::NoiseSpec(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| err());
        let model = match parts.as_slice() {
            ["data", p] => Self::data_level(num(p)?),
            ["phenom", p] => Self::phenomenological(num(p)?, num(p)?),
            ["phenom", p, q] => Self::phenomenological(num(p)?, num(q)?),
            ["circuit", p] => Self::circuit_level(num(p)?),
            _ => return Err(err()),
        };
        model.validate()?;
        Ok(model)
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NoiseKind::DataLevel => write!(f, "data:{}", self.p),
            NoiseKind::Phenomenological => write!(f, "phenom:{}:{}", self.p, self.q),
            NoiseKind::CircuitLevel => write!(f, "circuit:{}", self.p),
        }
    }
}

/// Single-qubit Pauli.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn has_x(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    pub fn has_z(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_spec_roundtrip() {
        for s in ["data:0.1", "phenom:0.01:0.02", "circuit:0.002"] {
            let m: NoiseModel = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        let m: NoiseModel = "phenom:0.03".parse().unwrap();
        assert_eq!(m.q, 0.03);
        assert!("circuit:1.5".parse::<NoiseModel>().is_err());
        assert!("bogus:0.1".parse::<NoiseModel>().is_err());
    }
}
