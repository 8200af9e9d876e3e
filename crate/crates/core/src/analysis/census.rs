use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::codes::gf2::pack;
use crate::codes::CssCode;
use crate::decoders::{Decoder, DecoderError, TypeProblem};
use crate::sim::Basis;

/// Default limit on the number of decoded subsets.
pub const DEFAULT_BUDGET: u64 = 20_000_000;

/// Minimal failure modes among single-type data-qubit faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureModeCensus {
    pub decoder: String,
    pub basis: Basis,
    pub locations: usize,
    /// Number of minimal failure modes by weight.
    pub counts: BTreeMap<usize, u64>,
    /// Largest weight enumerated completely.
    pub wmax: usize,
    pub requested_wmax: usize,
    /// The budget stopped the enumeration below `requested_wmax`.
    pub truncated: bool,
    pub modes: Vec<Vec<usize>>,
}

impl FailureModeCensus {
    pub fn count(&self, w: usize) -> u64 {
        self.counts.get(&w).copied().unwrap_or(0)
    }
}

/// Leading-order rate `Σ_w N(w)·qʷ` for per-location fault probability `q`.
pub fn predicted_pl(census: &FailureModeCensus, q: f64) -> f64 {
    census.counts.iter().map(|(&w, &n)| n as f64 * q.powi(w as i32)).sum()
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

fn fails(decoder: &dyn Decoder, prob: &TypeProblem, error: &[usize]) -> Result<bool, DecoderError> {
    match decoder.decode(&prob.syndrome(error)) {
        Ok(r) => Ok(r.flips != prob.flips(error)),
        Err(DecoderError::UnknownSyndrome) => Ok(true),
        Err(e) => Err(e),
    }
}

fn contains(outer: &[u64], inner: &[u64]) -> bool {
    inner.iter().zip(outer).all(|(i, o)| i & !o == 0)
}

fn subsets(n: usize, w: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut c: Vec<usize> = (0..w).collect();
    loop {
        out.push(c.clone());
        if !crate::decoders::next_combination(&mut c, n) {
            return out;
        }
    }
}

/// Enumerates every fault set of weight ≤ `wmax` (faults flip one data qubit
/// each, of the type a `basis` memory detects). A set is a minimal failure
/// mode when the decoder fails on it and on none of its proper subsets.
/// Undecodable syndromes count as failures.
pub fn enumerate_minimal_failure_modes(
    code: &CssCode,
    basis: Basis,
    decoder: &dyn Decoder,
    decoder_name: &str,
    wmax: usize,
    budget: u64,
) -> Result<FailureModeCensus, AnalysisError> {
    let prob = TypeProblem::new(code, basis);
    let n = prob.n();
    let mut counts = BTreeMap::new();
    let mut modes: Vec<Vec<usize>> = Vec::new();
    let mut packed: Vec<Vec<u64>> = Vec::new();
    let mut spent = 0u64;
    let mut complete = None;
    for w in 0..=wmax.min(n) {
        spent = spent.saturating_add(binomial(n, w));
        if spent > budget {
            break;
        }
        let found: Vec<Vec<usize>> = subsets(n, w)
            .into_par_iter()
            .filter_map(|s| {
                let bits = pack(n.max(1), &s);
                if packed.iter().any(|m| contains(&bits, m)) {
                    return None;
                }
                match fails(decoder, &prob, &s) {
                    Ok(true) => Some(Ok(s)),
                    Ok(false) => None,
                    Err(e) => Some(Err(e)),
                }
            })
            .collect::<Result<_, _>>()?;
        for s in &found {
            for skip in 0..s.len() {
                let sub: Vec<usize> = s.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &q)| q).collect();
                if fails(decoder, &prob, &sub)? {
                    return Err(AnalysisError::Invalid(format!("mode {s:?} has a failing subset {sub:?}")));
                }
            }
        }
        if !found.is_empty() {
            counts.insert(w, found.len() as u64);
        }
        packed.extend(found.iter().map(|s| pack(n.max(1), s)));
        modes.extend(found);
        complete = Some(w);
    }
    let wmax_done = complete.ok_or_else(|| AnalysisError::Invalid("budget allows no enumeration".into()))?;
    Ok(FailureModeCensus {
        decoder: decoder_name.to_string(),
        basis,
        locations: n,
        counts,
        wmax: wmax_done,
        requested_wmax: wmax,
        truncated: wmax_done < wmax.min(n),
        modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::{marginal_flip, DecodeResult, ExactMl};

    struct Identity {
        checks: Vec<usize>,
        k: usize,
    }

    impl Decoder for Identity {
        fn decode(&self, _: &[bool]) -> Result<DecodeResult, DecoderError> {
            Ok(DecodeResult {
                flips: vec![false; self.k],
                confidence: None,
                converged: None,
                iterations: 0,
            })
        }

        fn checks(&self) -> &[usize] {
            &self.checks
        }
    }

    #[test]
    fn identity_decoder_fails_on_logical_support() {
        let code = CssCode::preset("surface:3").unwrap();
        let prob = TypeProblem::new(&code, Basis::Z);
        let id = Identity { checks: prob.checks.clone(), k: 1 };
        let census = enumerate_minimal_failure_modes(&code, Basis::Z, &id, "identity", 3, DEFAULT_BUDGET).unwrap();
        let support = prob.logicals.row_support(0);
        assert_eq!(census.count(1), support.len() as u64);
        assert_eq!(census.counts.len(), 1);
        assert_eq!(census.modes, support.iter().map(|&q| vec![q]).collect::<Vec<_>>());
    }

    #[test]
    fn ml_census_on_d3() {
        let code = CssCode::preset("surface:3").unwrap();
        let q = marginal_flip(0.005);
        let ml = ExactMl::memory(&code, Basis::Z, q).unwrap();
        let census = enumerate_minimal_failure_modes(&code, Basis::Z, &ml, "ml", 3, DEFAULT_BUDGET).unwrap();
        assert_eq!(census.count(0), 0);
        assert_eq!(census.count(1), 0);
        assert!(census.count(2) > 0);
        assert!(!census.truncated);
        assert_eq!(predicted_pl(&census, 0.1), census.counts.iter().map(|(&w, &c)| c as f64 * 0.1f64.powi(w as i32)).sum::<f64>());
    }

    #[test]
    fn budget_truncates() {
        let code = CssCode::preset("surface:3").unwrap();
        let ml = ExactMl::memory(&code, Basis::X, 0.01).unwrap();
        let census = enumerate_minimal_failure_modes(&code, Basis::X, &ml, "ml", 4, 1 + 9 + 36).unwrap();
        assert_eq!((census.wmax, census.truncated), (2, true));
    }

    #[test]
    fn empty_census_predicts_zero() {
        let census = FailureModeCensus {
            decoder: "none".into(),
            basis: Basis::Z,
            locations: 0,
            counts: BTreeMap::new(),
            wmax: 0,
            requested_wmax: 0,
            truncated: false,
            modes: vec![],
        };
        assert_eq!(predicted_pl(&census, 0.3), 0.0);
    }
}
