use std::collections::HashMap;

use super::{DecodeResult, Decoder, DecoderError, TypeProblem};
use crate::codes::gf2::{dot, pack};
use crate::codes::CssCode;
use crate::sim::Basis;

/// Minimum-weight decoder from a table filled by increasing error weight.
/// Within a weight, errors are visited in lexicographic order of their
/// sorted qubit lists and the first one to reach a syndrome is kept.
#[derive(Debug, Clone)]
pub struct LookupDecoder {
    checks: Vec<usize>,
    m: usize,
    cutoff: usize,
    table: HashMap<Vec<u64>, (usize, Vec<bool>)>,
}

impl LookupDecoder {
    pub fn new(code: &CssCode, basis: Basis, cutoff: usize) -> Self {
        let prob = TypeProblem::new(code, basis);
        let n = prob.n();
        let m = prob.h.rows();
        let mut table = HashMap::new();
        let mut combo: Vec<usize> = Vec::new();
        for w in 0..=cutoff.min(n) {
            combo.clear();
            combo.extend(0..w);
            loop {
                let e = pack(n, &combo);
                let s: Vec<bool> = (0..m).map(|r| dot(prob.h.row(r), &e)).collect();
                let key = pack(m.max(1), &s.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect::<Vec<_>>());
                table.entry(key).or_insert_with(|| {
                    let flips = (0..prob.logicals.rows()).map(|r| dot(prob.logicals.row(r), &e)).collect();
                    (w, flips)
                });
                if !next_combination(&mut combo, n) {
                    break;
                }
            }
        }
        Self {
            checks: prob.checks,
            m,
            cutoff,
            table,
        }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Weight of the stored error for a syndrome.
    pub fn weight(&self, syndrome: &[bool]) -> Option<usize> {
        self.table.get(&self.key(syndrome)).map(|e| e.0)
    }

    fn key(&self, syndrome: &[bool]) -> Vec<u64> {
        let set: Vec<usize> = syndrome.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        pack(self.m.max(1), &set)
    }
}

/// Advances a sorted `k`-subset of `0..n` to its lexicographic successor.
pub fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

impl Decoder for LookupDecoder {
    fn decode(&self, syndrome: &[bool]) -> Result<DecodeResult, DecoderError> {
        if syndrome.len() != self.m {
            return Err(DecoderError::Syndrome {
                expected: self.m,
                got: syndrome.len(),
            });
        }
        let (_, flips) = self.table.get(&self.key(syndrome)).ok_or(DecoderError::UnknownSyndrome)?;
        Ok(DecodeResult {
            flips: flips.clone(),
            confidence: None,
            converged: None,
            iterations: 0,
        })
    }

    fn checks(&self) -> &[usize] {
        &self.checks
    }
}
