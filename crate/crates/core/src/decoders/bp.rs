use super::{DecodeResult, Decoder, DecoderError, TypeProblem};
use crate::codes::gf2::{dot, pack};
use crate::codes::{BinaryMatrix, CssCode};
use crate::sim::Basis;

pub const DEFAULT_ITERATIONS: usize = 30;
const TANH_LIMIT: f64 = 1.0 - 1e-15;

/// Product-sum belief propagation (flooding schedule, log-likelihood ratios).
#[derive(Debug, Clone)]
pub struct BpDecoder {
    h: BinaryMatrix,
    logicals: BinaryMatrix,
    checks: Vec<usize>,
    prior: f64,
    max_iterations: usize,
    early_stop: bool,
    check_nbrs: Vec<Vec<usize>>,
    /// For every check, the slot of each edge in the variable's edge list.
    var_edges: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpOutput {
    pub error: Vec<bool>,
    /// Posterior probability that each qubit is flipped.
    pub marginals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl BpDecoder {
    pub fn new(code: &CssCode, basis: Basis, prior: f64) -> Result<Self, DecoderError> {
        let prob = TypeProblem::new(code, basis);
        Self::from_matrices(prob.h, prob.logicals, prob.checks, prior)
    }

    pub fn from_matrices(
        h: BinaryMatrix,
        logicals: BinaryMatrix,
        checks: Vec<usize>,
        prior: f64,
    ) -> Result<Self, DecoderError> {
        if !(prior > 0.0 && prior < 0.5) {
            return Err(DecoderError::Probability(prior));
        }
        let check_nbrs = h.supports();
        let mut var_edges = vec![Vec::new(); h.cols()];
        let mut edge = 0;
        for nbrs in &check_nbrs {
            for &v in nbrs {
                var_edges[v].push(edge);
                edge += 1;
            }
        }
        Ok(Self {
            h,
            logicals,
            checks,
            prior,
            max_iterations: DEFAULT_ITERATIONS,
            early_stop: true,
            check_nbrs,
            var_edges,
        })
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.max_iterations = iterations;
        self
    }

    /// Keep iterating after the hard decision satisfies the syndrome.
    pub fn without_early_stop(mut self) -> Self {
        self.early_stop = false;
        self
    }

    fn satisfies(&self, error: &[bool], syndrome: &[bool]) -> bool {
        let support: Vec<usize> = (0..error.len()).filter(|&i| error[i]).collect();
        let e = pack(self.h.cols(), &support);
        (0..self.h.rows()).all(|r| dot(self.h.row(r), &e) == syndrome[r])
    }

    pub fn run(&self, syndrome: &[bool]) -> Result<BpOutput, DecoderError> {
        let (m, n) = (self.h.rows(), self.h.cols());
        if syndrome.len() != m {
            return Err(DecoderError::Syndrome { expected: m, got: syndrome.len() });
        }
        let l0 = ((1.0 - self.prior) / self.prior).ln();
        let edges: usize = self.check_nbrs.iter().map(Vec::len).sum();
        let mut v2c = vec![l0; edges];
        let mut c2v = vec![0.0; edges];
        let mut posterior = vec![l0; n];
        let mut error = vec![false; n];
        let mut converged = self.satisfies(&error, syndrome);
        let mut iterations = 0;
        while iterations < self.max_iterations && !(converged && self.early_stop) {
            let mut e = 0;
            for (c, nbrs) in self.check_nbrs.iter().enumerate() {
                let t: Vec<f64> = v2c[e..e + nbrs.len()].iter().map(|&x| (x / 2.0).tanh()).collect();
                let sign = if syndrome[c] { -1.0 } else { 1.0 };
                for i in 0..nbrs.len() {
                    let prod: f64 = t.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).product();
                    c2v[e + i] = sign * 2.0 * prod.clamp(-TANH_LIMIT, TANH_LIMIT).atanh();
                }
                e += nbrs.len();
            }
            for v in 0..n {
                posterior[v] = l0 + self.var_edges[v].iter().map(|&k| c2v[k]).sum::<f64>();
                for &k in &self.var_edges[v] {
                    v2c[k] = posterior[v] - c2v[k];
                }
                error[v] = posterior[v] < 0.0;
            }
            iterations += 1;
            converged = self.satisfies(&error, syndrome);
        }
        Ok(BpOutput {
            error,
            marginals: posterior.iter().map(|&l| 1.0 / (1.0 + l.exp())).collect(),
            converged,
            iterations,
        })
    }
}

impl Decoder for BpDecoder {
    fn decode(&self, syndrome: &[bool]) -> Result<DecodeResult, DecoderError> {
        let out = self.run(syndrome)?;
        let support: Vec<usize> = (0..out.error.len()).filter(|&i| out.error[i]).collect();
        let e = pack(self.h.cols(), &support);
        Ok(DecodeResult {
            flips: (0..self.logicals.rows()).map(|r| dot(self.logicals.row(r), &e)).collect(),
            confidence: None,
            converged: Some(out.converged),
            iterations: out.iterations,
        })
    }

    fn checks(&self) -> &[usize] {
        &self.checks
    }
}
