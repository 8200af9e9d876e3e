//! Prediction files: a 16-byte header (`CDPR`, shots u32, observables u16,
//! flags u16, reserved u32), predicted flips bit-packed like batch labels
//! (bit `s·K + o`), then optional per-observable flip probabilities as LE f32.

use std::path::Path;

use convdec::decoders::DecodeResult;
use convdec::train::Evaluation;

const MAGIC: &[u8; 4] = b"CDPR";
const HAS_PROBABILITIES: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub shots: usize,
    pub observables: usize,
    pub flips: Vec<bool>,
    /// `P(flip)` per shot and observable.
    pub probabilities: Option<Vec<f32>>,
}

impl Predictions {
    pub fn from_evaluation(e: &Evaluation) -> Self {
        Self {
            shots: e.shots,
            observables: e.observables,
            flips: e.probabilities.iter().map(|&p| p > 0.5).collect(),
            probabilities: Some(e.probabilities.clone()),
        }
    }

    pub fn from_results(results: &[DecodeResult], observables: usize) -> Self {
        let flips = results.iter().flat_map(|r| r.flips.iter().copied()).collect();
        let probabilities = results
            .iter()
            .map(|r| r.confidence.as_ref().map(|c| c.iter().map(|&v| v as f32).collect::<Vec<_>>()))
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        Self {
            shots: results.len(),
            observables,
            flips,
            probabilities: probabilities.filter(|_| !results.is_empty()),
        }
    }

    /// Shots on which any observable disagrees with `labels`.
    pub fn failures(&self, labels: &[bool]) -> usize {
        let k = self.observables.max(1);
        self.flips.chunks(k).zip(labels.chunks(k)).filter(|(f, l)| f != l).count()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, String> {
        if self.shots > u32::MAX as usize || self.observables > u16::MAX as usize {
            return Err("prediction counts do not fit the header".into());
        }
        let mut out = Vec::with_capacity(16 + self.flips.len() / 8 + 1);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.shots as u32).to_le_bytes());
        out.extend_from_slice(&(self.observables as u16).to_le_bytes());
        let flags = if self.probabilities.is_some() { HAS_PROBABILITIES } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        let mut packed = vec![0u8; self.flips.len().div_ceil(8)];
        for (i, &f) in self.flips.iter().enumerate() {
            packed[i / 8] |= u8::from(f) << (i % 8);
        }
        out.extend_from_slice(&packed);
        if let Some(p) = &self.probabilities {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err("not a prediction file".into());
        }
        let shots = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let observables = u16::from_le_bytes(bytes[8..10].try_into().expect("2 bytes")) as usize;
        let flags = u16::from_le_bytes(bytes[10..12].try_into().expect("2 bytes"));
        let n = shots * observables;
        let packed_len = n.div_ceil(8);
        let prob_len = if flags & HAS_PROBABILITIES != 0 { 4 * n } else { 0 };
        if bytes.len() != 16 + packed_len + prob_len {
            return Err("prediction file length does not match its header".into());
        }
        let packed = &bytes[16..16 + packed_len];
        let flips = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        let probabilities = (prob_len > 0).then(|| {
            bytes[16 + packed_len..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        });
        Ok(Self {
            shots,
            observables,
            flips,
            probabilities,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), String> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?)
    }
}
