use super::{DecodeResult, Decoder, DecoderError, TypeProblem};
use crate::codes::CssCode;
use crate::sim::Basis;

/// Largest code for the single-type (memory-experiment) oracle.
pub const MAX_MEMORY_QUBITS: usize = 25;
/// Largest code for the full depolarizing oracle (4ⁿ errors).
pub const MAX_FULL_QUBITS: usize = 16;
const MAX_TABLE_BITS: usize = 28;

/// Exhaustive maximum-likelihood decoder: the probability of every
/// (syndrome, logical class) cell, summed over all errors.
#[derive(Debug, Clone)]
pub struct ExactMl {
    checks: Vec<usize>,
    syndrome_bits: usize,
    class_bits: usize,
    /// `table[s << class_bits | c]`.
    table: Vec<f64>,
    decisions: Vec<u32>,
}

fn column_masks(rows: &[Vec<usize>], n: usize) -> Vec<u64> {
    let mut cols = vec![0u64; n];
    for (r, support) in rows.iter().enumerate() {
        for &q in support {
            cols[q] ^= 1 << r;
        }
    }
    cols
}

fn probability(p: f64) -> Result<(), DecoderError> {
    if p > 0.0 && p < 0.5 {
        Ok(())
    } else {
        Err(DecoderError::Probability(p))
    }
}

fn check_table(syndrome_bits: usize, class_bits: usize) -> Result<(), DecoderError> {
    if syndrome_bits + class_bits > MAX_TABLE_BITS {
        return Err(DecoderError::TooLarge {
            what: "exact ML table",
            limit: MAX_TABLE_BITS,
            unit: "syndrome and class bits",
            got: syndrome_bits + class_bits,
        });
    }
    Ok(())
}

impl ExactMl {
    /// Oracle for a `basis`-memory experiment: independent flips with
    /// probability `q` on every qubit (`q = 2p/3` for depolarizing `p`).
    pub fn memory(code: &CssCode, basis: Basis, q: f64) -> Result<Self, DecoderError> {
        probability(q)?;
        let prob = TypeProblem::new(code, basis);
        let n = prob.n();
        if n > MAX_MEMORY_QUBITS {
            return Err(DecoderError::TooLarge {
                what: "memory ML",
                limit: MAX_MEMORY_QUBITS,
                unit: "qubits",
                got: n,
            });
        }
        let (m, k) = (prob.h.rows(), prob.logicals.rows());
        check_table(m, k)?;
        let syn = column_masks(&prob.h.supports(), n);
        let cls = column_masks(&prob.logicals.supports(), n);
        let by_weight: Vec<f64> = (0..=n).map(|w| q.powi(w as i32) * (1.0 - q).powi((n - w) as i32)).collect();
        let mut table = vec![0.0; 1 << (m + k)];
        let (mut s, mut c, mut w) = (0u64, 0u64, 0usize);
        let mut e = 0u64;
        table[0] += by_weight[0];
        for i in 1u64..(1 << n) {
            let q = i.trailing_zeros() as usize;
            e ^= 1 << q;
            if e >> q & 1 == 1 {
                w += 1;
            } else {
                w -= 1;
            }
            s ^= syn[q];
            c ^= cls[q];
            table[((s << k) | c) as usize] += by_weight[w];
        }
        Ok(Self::finish(prob.checks, m, k, table))
    }

    /// Oracle for single-qubit depolarizing noise `p` on data qubits, decoding
    /// the full syndrome (X checks then Z checks). Classes list the flips of
    /// the Z-type logicals (X errors) followed by the X-type logicals (Z errors).
    pub fn depolarizing(code: &CssCode, p: f64) -> Result<Self, DecoderError> {
        probability(p)?;
        let n = code.n;
        if n > MAX_FULL_QUBITS {
            return Err(DecoderError::TooLarge {
                what: "depolarizing ML",
                limit: MAX_FULL_QUBITS,
                unit: "qubits",
                got: n,
            });
        }
        let (mx, mz, k) = (code.num_x_checks(), code.num_z_checks(), code.k);
        check_table(mx + mz, 2 * k)?;
        // X errors trip Z checks and Z-type logicals; Z errors the X ones.
        let syn_x = column_masks(&code.hz.supports(), n).into_iter().map(|v| v << mx).collect::<Vec<_>>();
        let cls_x = column_masks(&code.logicals_z.supports(), n);
        let syn_z = column_masks(&code.hx.supports(), n);
        let cls_z = column_masks(&code.logicals_x.supports(), n).into_iter().map(|v| v << k).collect::<Vec<_>>();
        let by_weight: Vec<f64> = (0..=n)
            .map(|w| (p / 3.0).powi(w as i32) * (1.0 - p).powi((n - w) as i32))
            .collect();
        let mut table = vec![0.0; 1 << (mx + mz + 2 * k)];
        let class_bits = 2 * k;
        let (mut sx, mut cx, mut ex) = (0u64, 0u64, 0u64);
        for i in 0u64..(1 << n) {
            if i > 0 {
                let q = i.trailing_zeros() as usize;
                ex ^= 1 << q;
                sx ^= syn_x[q];
                cx ^= cls_x[q];
            }
            let (mut sz, mut cz, mut ez) = (0u64, 0u64, 0u64);
            for j in 0u64..(1 << n) {
                if j > 0 {
                    let q = j.trailing_zeros() as usize;
                    ez ^= 1 << q;
                    sz ^= syn_z[q];
                    cz ^= cls_z[q];
                }
                let w = (ex | ez).count_ones() as usize;
                table[(((sx ^ sz) << class_bits) | cx | cz) as usize] += by_weight[w];
            }
        }
        Ok(Self::finish((0..mx + mz).collect(), mx + mz, class_bits, table))
    }

    fn finish(checks: Vec<usize>, syndrome_bits: usize, class_bits: usize, table: Vec<f64>) -> Self {
        let decisions = table
            .chunks(1 << class_bits)
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect();
        Self {
            checks,
            syndrome_bits,
            class_bits,
            table,
            decisions,
        }
    }

    pub fn observables(&self) -> usize {
        self.class_bits
    }

    fn index(&self, syndrome: &[bool]) -> Result<usize, DecoderError> {
        if syndrome.len() != self.syndrome_bits {
            return Err(DecoderError::Syndrome {
                expected: self.syndrome_bits,
                got: syndrome.len(),
            });
        }
        Ok(syndrome.iter().enumerate().fold(0, |acc, (i, &b)| acc | (usize::from(b) << i)))
    }

    /// Joint probability of each logical class together with `syndrome`.
    pub fn joint(&self, syndrome: &[bool]) -> Result<&[f64], DecoderError> {
        let s = self.index(syndrome)?;
        let width = 1 << self.class_bits;
        Ok(&self.table[s * width..(s + 1) * width])
    }

    /// Probability that the ML decision is wrong, averaged over all errors.
    pub fn failure_rate(&self) -> f64 {
        self.table
            .chunks(1 << self.class_bits)
            .zip(&self.decisions)
            .map(|(row, &d)| row.iter().enumerate().filter(|&(c, _)| c != d as usize).map(|(_, v)| v).sum::<f64>())
            .sum()
    }

    /// Decision for a syndrome given as packed bits (bit `i` = check `i`).
    pub fn decision(&self, syndrome: usize) -> u32 {
        self.decisions[syndrome]
    }
}

impl Decoder for ExactMl {
    fn decode(&self, syndrome: &[bool]) -> Result<DecodeResult, DecoderError> {
        let s = self.index(syndrome)?;
        let width = 1 << self.class_bits;
        let row = &self.table[s * width..(s + 1) * width];
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            return Err(DecoderError::UnknownSyndrome);
        }
        let class = self.decisions[s];
        let confidence = (0..self.class_bits)
            .map(|i| row.iter().enumerate().filter(|(c, _)| c >> i & 1 == 1).map(|(_, v)| v).sum::<f64>() / total)
            .collect();
        Ok(DecodeResult {
            flips: (0..self.class_bits).map(|i| class >> i & 1 == 1).collect(),
            confidence: Some(confidence),
            converged: None,
            iterations: 0,
        })
    }

    fn checks(&self) -> &[usize] {
        &self.checks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::marginal_flip;

    fn d3() -> CssCode {
        CssCode::preset("surface:3").unwrap()
    }

    #[test]
    fn zero_syndrome_is_identity() {
        let ml = ExactMl::memory(&d3(), Basis::Z, 0.01).unwrap();
        let r = ml.decode(&[false; 4]).unwrap();
        assert_eq!(r.flips, vec![false]);
        assert!(r.confidence.unwrap()[0] < 0.5);
        let full = ExactMl::depolarizing(&d3(), 0.01).unwrap();
        assert_eq!(full.decode(&[false; 8]).unwrap().flips, vec![false, false]);
    }

    #[test]
    fn weight_one_errors_are_corrected() {
        let code = d3();
        for basis in [Basis::X, Basis::Z] {
            let ml = ExactMl::memory(&code, basis, 0.05).unwrap();
            let prob = TypeProblem::new(&code, basis);
            for q in 0..code.n {
                let r = ml.decode(&prob.syndrome(&[q])).unwrap();
                assert_eq!(r.flips, prob.flips(&[q]));
            }
        }
        let full = ExactMl::depolarizing(&code, 0.05).unwrap();
        for q in 0..code.n {
            for (x, z) in [(true, false), (false, true), (true, true)] {
                let mut syndrome = vec![false; 8];
                let mut want = vec![false; 2];
                if x {
                    let pz = TypeProblem::new(&code, Basis::Z);
                    for (i, b) in pz.syndrome(&[q]).into_iter().enumerate() {
                        syndrome[4 + i] ^= b;
                    }
                    want[0] ^= pz.flips(&[q])[0];
                }
                if z {
                    let px = TypeProblem::new(&code, Basis::X);
                    for (i, b) in px.syndrome(&[q]).into_iter().enumerate() {
                        syndrome[i] ^= b;
                    }
                    want[1] ^= px.flips(&[q])[0];
                }
                assert_eq!(full.decode(&syndrome).unwrap().flips, want);
            }
        }
    }

    #[test]
    fn memory_table_is_the_marginal_of_the_full_table() {
        let code = d3();
        let p = 0.08;
        let full = ExactMl::depolarizing(&code, p).unwrap();
        let mem = ExactMl::memory(&code, Basis::Z, marginal_flip(p)).unwrap();
        // Sum the full table over X-check syndromes and the X-basis class bit.
        let mut marg = vec![0.0; 1 << 5];
        for (idx, &v) in full.table.iter().enumerate() {
            let (s, c) = (idx >> 2, idx & 3);
            marg[((s >> 4) << 1) | (c & 1)] += v;
        }
        for (a, b) in marg.iter().zip(&mem.table) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((full.table.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn failure_rate_matches_direct_sum() {
        let code = d3();
        let q = 0.07;
        let ml = ExactMl::memory(&code, Basis::Z, q).unwrap();
        let prob = TypeProblem::new(&code, Basis::Z);
        let mut rate = 0.0;
        for e in 0u32..(1 << code.n) {
            let err: Vec<usize> = (0..code.n).filter(|&i| e >> i & 1 == 1).collect();
            let w = err.len() as i32;
            let r = ml.decode(&prob.syndrome(&err)).unwrap();
            if r.flips != prob.flips(&err) {
                rate += q.powi(w) * (1.0 - q).powi(code.n as i32 - w);
            }
        }
        assert!((rate - ml.failure_rate()).abs() < 1e-14);
    }

    #[test]
    fn rejects_large_codes() {
        let code = CssCode::preset("bb72").unwrap();
        assert!(matches!(ExactMl::memory(&code, Basis::Z, 0.01), Err(DecoderError::TooLarge { .. })));
        let d5 = CssCode::preset("surface:5").unwrap();
        assert!(ExactMl::depolarizing(&d5, 0.01).is_err());
        assert!(matches!(ExactMl::memory(&d3(), Basis::Z, 0.7), Err(DecoderError::Probability(_))));
    }
}
