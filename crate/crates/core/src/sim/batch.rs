use std::io::{Read, Write};
use std::path::Path;

use super::SimError;
use crate::codes::{CssCode, Layout};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SYNB";

/// Detection events and logical-flip labels of a sampled batch.
///
/// Bits are stored contiguously: detection `(s, r, c)` at bit
/// `(s·R + r)·C + c`, label `(s, o)` at bit `s·K + o`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyndromeBatch {
    pub shots: usize,
    pub rounds: usize,
    pub checks_per_round: usize,
    pub observables: usize,
    detections: Vec<u64>,
    labels: Vec<u64>,
}

fn get_bit(words: &[u64], i: usize) -> bool {
    words[i / 64] >> (i % 64) & 1 == 1
}

fn toggle_bit(words: &mut [u64], i: usize) {
    words[i / 64] ^= 1 << (i % 64);
}

fn to_bytes(words: &[u64], bits: usize) -> Vec<u8> {
    let mut out: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    out.truncate(bits.div_ceil(8));
    out
}

fn from_bytes(bytes: &[u8], bits: usize) -> Vec<u64> {
    let mut words = vec![0u64; bits.div_ceil(64)];
    for (i, &b) in bytes.iter().enumerate() {
        words[i / 8] |= u64::from(b) << (8 * (i % 8));
    }
    words
}

impl SyndromeBatch {
    pub fn zeros(shots: usize, rounds: usize, checks_per_round: usize, observables: usize) -> Self {
        Self {
            shots,
            rounds,
            checks_per_round,
            observables,
            detections: vec![0; (shots * rounds * checks_per_round).div_ceil(64)],
            labels: vec![0; (shots * observables).div_ceil(64)],
        }
    }

    pub fn detectors_per_shot(&self) -> usize {
        self.rounds * self.checks_per_round
    }

    pub fn detection(&self, shot: usize, round: usize, check: usize) -> bool {
        get_bit(&self.detections, (shot * self.rounds + round) * self.checks_per_round + check)
    }

    /// Detection by flat per-shot index `round · C + check`.
    pub fn detection_at(&self, shot: usize, pos: usize) -> bool {
        get_bit(&self.detections, shot * self.detectors_per_shot() + pos)
    }

    pub fn toggle_detection_at(&mut self, shot: usize, pos: usize) {
        let per = self.detectors_per_shot();
        toggle_bit(&mut self.detections, shot * per + pos);
    }

    pub fn label(&self, shot: usize, observable: usize) -> bool {
        get_bit(&self.labels, shot * self.observables + observable)
    }

    pub fn toggle_label(&mut self, shot: usize, observable: usize) {
        toggle_bit(&mut self.labels, shot * self.observables + observable);
    }

    /// Dense per-shot detections, `R · C` entries.
    pub fn shot_detections(&self, shot: usize) -> Vec<bool> {
        (0..self.detectors_per_shot()).map(|p| self.detection_at(shot, p)).collect()
    }

    pub fn shot_labels(&self, shot: usize) -> Vec<bool> {
        (0..self.observables).map(|o| self.label(shot, o)).collect()
    }

    pub fn count_detections(&self) -> usize {
        self.detections.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Shots `start..start + len` as a new batch.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let mut out = Self::zeros(len, self.rounds, self.checks_per_round, self.observables);
        for s in 0..len {
            for p in 0..self.detectors_per_shot() {
                if self.detection_at(start + s, p) {
                    out.toggle_detection_at(s, p);
                }
            }
            for o in 0..self.observables {
                if self.label(start + s, o) {
                    out.toggle_label(s, o);
                }
            }
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), SimError> {
        let narrow = |v: usize, max: usize, what: &str| {
            if v > max {
                Err(SimError::Format(format!("{what} {v} does not fit the header")))
            } else {
                Ok(v)
            }
        };
        let mut header = Vec::with_capacity(16);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&(narrow(self.shots, u32::MAX as usize, "shots")? as u32).to_le_bytes());
        header.extend_from_slice(&(narrow(self.rounds, u16::MAX as usize, "rounds")? as u16).to_le_bytes());
        header.extend_from_slice(&(narrow(self.checks_per_round, u32::MAX as usize, "checks")? as u32).to_le_bytes());
        header.extend_from_slice(&(narrow(self.observables, u16::MAX as usize, "observables")? as u16).to_le_bytes());
        w.write_all(&header)?;
        w.write_all(&to_bytes(&self.detections, self.shots * self.detectors_per_shot()))?;
        w.write_all(&to_bytes(&self.labels, self.shots * self.observables))?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, SimError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != MAGIC {
            return Err(SimError::Format("bad magic".into()));
        }
        let shots = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let rounds = u16::from_le_bytes(header[8..10].try_into().expect("2 bytes")) as usize;
        let checks = u32::from_le_bytes(header[10..14].try_into().expect("4 bytes")) as usize;
        let observables = u16::from_le_bytes(header[14..16].try_into().expect("2 bytes")) as usize;
        let det_bits = shots * rounds * checks;
        let label_bits = shots * observables;
        let mut det = vec![0u8; det_bits.div_ceil(8)];
        r.read_exact(&mut det).map_err(|_| SimError::Format("truncated detections".into()))?;
        let mut lab = vec![0u8; label_bits.div_ceil(8)];
        r.read_exact(&mut lab).map_err(|_| SimError::Format("truncated labels".into()))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(SimError::Format("trailing bytes".into()));
        }
        let batch = Self {
            shots,
            rounds,
            checks_per_round: checks,
            observables,
            detections: from_bytes(&det, det_bits),
            labels: from_bytes(&lab, label_bits),
        };
        // Padding bits must be clear for equality to be meaningful.
        let mut canonical = Vec::new();
        batch.write_to(&mut canonical)?;
        if canonical[16..] != [det, lab].concat()[..] {
            return Err(SimError::Format("nonzero padding bits".into()));
        }
        Ok(batch)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::read_from(std::fs::read(path)?.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        buf
    }
}

/// Spatial shape of one syndrome slice for a code layout: `[d+1, d+1]` for
/// surface codes, `[2, l, m]` for bivariate bicycle codes.
pub fn slice_shape(code: &CssCode) -> Vec<usize> {
    match &code.layout {
        Layout::Grid(g) => vec![g.side(), g.side()],
        Layout::Torus(t) => vec![2, t.l, t.m],
    }
}

/// Position of each global check within a slice (flattened).
pub fn check_positions(code: &CssCode) -> Vec<usize> {
    match &code.layout {
        Layout::Grid(g) => g.checks.iter().map(|c| g.cell_index(c.row, c.col)).collect(),
        Layout::Torus(_) => (0..code.num_checks()).collect(),
    }
}

/// Dense `(shots, R, …slice)` tensor of detection events, zero-padded on
/// cells without a check.
pub fn syndrome_to_tensor(batch: &SyndromeBatch, code: &CssCode) -> Result<Tensor<f32>, SimError> {
    if batch.checks_per_round != code.num_checks() {
        return Err(SimError::Layout(format!(
            "batch has {} checks per round, code has {}",
            batch.checks_per_round,
            code.num_checks()
        )));
    }
    let slice = slice_shape(code);
    let cells: usize = slice.iter().product();
    let positions = check_positions(code);
    let mut shape = vec![batch.shots, batch.rounds];
    shape.extend(&slice);
    let mut t = Tensor::zeros(&shape);
    for s in 0..batch.shots {
        for r in 0..batch.rounds {
            let base = (s * batch.rounds + r) * cells;
            for (c, &pos) in positions.iter().enumerate() {
                if batch.detection(s, r, c) {
                    t.data[base + pos] = 1.0;
                }
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::BbPreset;
    use crate::sim::{build_memory_circuit, sample, Basis, NoiseModel};

    #[test]
    fn file_roundtrip() {
        let code = CssCode::preset("surface:3").unwrap();
        let c = build_memory_circuit(&code, 3, Basis::X, &NoiseModel::data_level(0.1)).unwrap();
        let b = sample(&c, 77, 1);
        let bytes = b.to_bytes();
        assert_eq!(bytes.len(), 16 + (77 * 24usize).div_ceil(8) + 77usize.div_ceil(8));
        assert_eq!(SyndromeBatch::read_from(bytes.as_slice()).unwrap(), b);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SyndromeBatch::read_from(bad.as_slice()).is_err());
        assert!(SyndromeBatch::read_from(&bytes[..bytes.len() - 1]).is_err());
    }

    fn all_ones(shots: usize, rounds: usize, checks: usize) -> SyndromeBatch {
        let mut b = SyndromeBatch::zeros(shots, rounds, checks, 1);
        for s in 0..shots {
            for p in 0..rounds * checks {
                b.toggle_detection_at(s, p);
            }
        }
        b
    }

    #[test]
    fn surface_tensor_places_checks_on_cells() {
        let code = CssCode::preset("surface:3").unwrap();
        let t = syndrome_to_tensor(&SyndromeBatch::zeros(2, 3, 8, 1), &code).unwrap();
        assert_eq!(t.shape, vec![2, 3, 4, 4]);
        assert!(t.data.iter().all(|&v| v == 0.0));
        let t = syndrome_to_tensor(&all_ones(1, 3, 8), &code).unwrap();
        for slice in t.data.chunks(16) {
            assert_eq!(slice.iter().sum::<f32>(), 8.0);
        }
        // Corner cells never host a check.
        assert_eq!(t.data[0], 0.0);
        assert_eq!(t.data[15], 0.0);
    }

    #[test]
    fn bb_tensor_shape() {
        let code = BbPreset::Bb144.build().unwrap();
        let t = syndrome_to_tensor(&all_ones(1, 2, 144), &code).unwrap();
        assert_eq!(t.shape, vec![1, 2, 2, 12, 6]);
        for slice in t.data.chunks(144) {
            assert_eq!(slice.iter().sum::<f32>(), 144.0);
        }
        assert!(syndrome_to_tensor(&all_ones(1, 2, 8), &code).is_err());
    }
}
