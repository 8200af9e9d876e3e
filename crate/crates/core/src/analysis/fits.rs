use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{AnalysisError, ErrorRatePoint};

/// Published Λ values kept for comparison in reports.
pub const REFERENCE_LAMBDA: [(&str, f64); 3] = [("convolutional", 8.4), ("mwpm", 5.0), ("tesseract", 9.1)];
/// Published waterfall and floor exponents of the [[144,12,12]] code.
pub const REFERENCE_WATERFALL_EXPONENTS: (f64, f64) = (10.8, 6.4);
/// Published suppression exponent of wide models.
pub const REFERENCE_SATURATED_EXPONENT: f64 = 8.0;

const Z95: f64 = 1.959_963_984_540_054;
const LM_MAX_ITERATIONS: usize = 500;
/// Components contributing less than this share everywhere are dropped.
const NEGLIGIBLE_SHARE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Lambda,
    TwoPowerlaw,
    SinglePowerlaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: FitKind,
    pub lambda: Option<f64>,
    /// `(a, b)` with `a > b` for the two-power law.
    pub exponents: Option<(f64, f64)>,
    /// `(A, B)`, or `(C, 0)` for a single power law.
    pub prefactors: Option<(f64, f64)>,
    pub m: Option<f64>,
    pub p_th: Option<f64>,
    /// Euclidean norm of the (weighted) log-space residuals.
    pub residual_norm: f64,
    /// Covariance of the fitted parameters in log space: `(ln C, ln Λ)`,
    /// `(ln C, m)` or `(ln A, a, ln B, b)`.
    pub covariance: Vec<Vec<f64>>,
    pub converged: bool,
    /// One of the two power-law components vanished.
    pub degenerate: bool,
    pub iterations: usize,
}

impl FitResult {
    /// Threshold estimate `Λ·p` from a Λ fit taken at physical rate `p`.
    pub fn with_threshold(mut self, p: f64) -> Self {
        self.p_th = self.lambda.map(|l| l * p);
        self
    }
}

/// Error rate of one code distance at a fixed physical rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub d: usize,
    pub p_l: f64,
    /// Standard deviation of `ln p_l`; unit weight when absent.
    pub sigma_ln: Option<f64>,
}

/// Error rate at one physical rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub p: f64,
    pub p_l: f64,
    pub sigma_ln: Option<f64>,
}

/// Log-space standard deviation implied by a 95% interval.
fn sigma_from_interval(low: f64, high: f64) -> Option<f64> {
    (low > 0.0 && high > low).then(|| (high.ln() - low.ln()) / (2.0 * Z95))
}

impl LambdaPoint {
    pub fn from_rate(d: usize, point: &ErrorRatePoint) -> Self {
        Self {
            d,
            p_l: point.p_l,
            sigma_ln: sigma_from_interval(point.ci_low, point.ci_high),
        }
    }
}

impl From<&ErrorRatePoint> for PowerPoint {
    fn from(point: &ErrorRatePoint) -> Self {
        Self {
            p: point.p,
            p_l: point.p_l,
            sigma_ln: sigma_from_interval(point.ci_low, point.ci_high),
        }
    }
}

fn weight(sigma: Option<f64>) -> f64 {
    match sigma {
        Some(s) if s.is_finite() && s > 0.0 => 1.0 / (s * s),
        _ => 1.0,
    }
}

fn log_rate(p_l: f64) -> Result<f64, AnalysisError> {
    if p_l > 0.0 && p_l.is_finite() {
        Ok(p_l.ln())
    } else {
        Err(AnalysisError::NonPositive(p_l))
    }
}

struct Line {
    intercept: f64,
    slope: f64,
    covariance: Matrix2<f64>,
    residual_norm: f64,
}

/// Weighted least squares `y ≈ intercept + slope·x`. The covariance is the
/// inverse normal matrix scaled by the reduced chi-square when there are
/// more points than parameters.
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Option<Line> {
    let n = x.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { w[i].sqrt() } else { w[i].sqrt() * x[i] });
    let rhs = DVector::from_fn(n, |i, _| w[i].sqrt() * y[i]);
    let normal: Matrix2<f64> = (design.transpose() * &design).fixed_view::<2, 2>(0, 0).into();
    let inv = normal.try_inverse()?;
    let beta = inv * (design.transpose() * &rhs).fixed_rows::<2>(0);
    let resid = &rhs - &design * DVector::from_column_slice(beta.as_slice());
    let rss = resid.norm_squared();
    let scale = if n > 2 { rss / (n - 2) as f64 } else { 0.0 };
    Some(Line {
        intercept: beta[0],
        slope: beta[1],
        covariance: inv * scale,
        residual_norm: rss.sqrt(),
    })
}

fn rows(m: &Matrix2<f64>) -> Vec<Vec<f64>> {
    (0..2).map(|i| (0..2).map(|j| m[(i, j)]).collect()).collect()
}

/// Fits `P_L = C·Λ^{−⌊(d+1)/2⌋}` by weighted least squares on `ln P_L`.
pub fn fit_lambda(points: &[LambdaPoint]) -> Result<FitResult, AnalysisError> {
    let mut distances: Vec<usize> = points.iter().map(|p| p.d).collect();
    distances.sort_unstable();
    distances.dedup();
    if distances.len() < 2 {
        return Err(AnalysisError::TooFewPoints("Λ fit (distinct distances)", 2));
    }
    let y = points.iter().map(|p| log_rate(p.p_l)).collect::<Result<Vec<_>, _>>()?;
    let x: Vec<f64> = points.iter().map(|p| -(((p.d + 1) / 2) as f64)).collect();
    let w: Vec<f64> = points.iter().map(|p| weight(p.sigma_ln)).collect();
    let line = weighted_line(&x, &y, &w).ok_or_else(|| AnalysisError::Invalid("singular Λ fit".into()))?;
    Ok(FitResult {
        kind: FitKind::Lambda,
        lambda: Some(line.slope.exp()),
        exponents: None,
        prefactors: Some((line.intercept.exp(), 0.0)),
        m: None,
        p_th: None,
        residual_norm: line.residual_norm,
        covariance: rows(&line.covariance),
        converged: true,
        degenerate: false,
        iterations: 0,
    })
}

fn power_line(points: &[PowerPoint]) -> Result<Line, AnalysisError> {
    let y = points.iter().map(|p| log_rate(p.p_l)).collect::<Result<Vec<_>, _>>()?;
    let x = points.iter().map(|p| log_rate(p.p)).collect::<Result<Vec<_>, _>>()?;
    let w: Vec<f64> = points.iter().map(|p| weight(p.sigma_ln)).collect();
    weighted_line(&x, &y, &w).ok_or_else(|| AnalysisError::Invalid("points share a single p".into()))
}

/// Slope `m` of `P_L ∝ p^m` in log-log space.
pub fn fit_suppression_exponent(points: &[PowerPoint]) -> Result<FitResult, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::TooFewPoints("power-law fit", 2));
    }
    let line = power_line(points)?;
    Ok(FitResult {
        kind: FitKind::SinglePowerlaw,
        lambda: None,
        exponents: None,
        prefactors: Some((line.intercept.exp(), 0.0)),
        m: Some(line.slope),
        p_th: None,
        residual_norm: line.residual_norm,
        covariance: rows(&line.covariance),
        converged: true,
        degenerate: false,
        iterations: 0,
    })
}

struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
    sw: Vec<f64>,
}

impl Problem {
    /// Weighted residuals and Jacobian for `θ = (ln A, a, ln B, b)`.
    fn eval(&self, t: &Vector4<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.x.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 4);
        for i in 0..n {
            let (u, v) = (t[0] + t[1] * self.x[i], t[2] + t[3] * self.x[i]);
            let top = u.max(v);
            let (eu, ev) = ((u - top).exp(), (v - top).exp());
            let f = top + (eu + ev).ln();
            let (su, sv) = (eu / (eu + ev), ev / (eu + ev));
            r[i] = self.sw[i] * (f - self.y[i]);
            j[(i, 0)] = self.sw[i] * su;
            j[(i, 1)] = self.sw[i] * su * self.x[i];
            j[(i, 2)] = self.sw[i] * sv;
            j[(i, 3)] = self.sw[i] * sv * self.x[i];
        }
        (r, j)
    }

    fn shares(&self, t: &Vector4<f64>) -> (f64, f64) {
        self.x.iter().fold((0.0f64, 0.0f64), |(a, b), &x| {
            let (u, v) = (t[0] + t[1] * x, t[2] + t[3] * x);
            let su = 1.0 / (1.0 + (v - u).exp());
            (a.max(su), b.max(1.0 - su))
        })
    }
}

/// Levenberg–Marquardt with Marquardt's diagonal scaling.
fn levenberg_marquardt(prob: &Problem, start: Vector4<f64>) -> (Vector4<f64>, f64, usize, bool) {
    let mut t = start;
    let (mut r, mut j) = prob.eval(&t);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for it in 1..=LM_MAX_ITERATIONS {
        let jtj: Matrix4<f64> = (j.transpose() * &j).fixed_view::<4, 4>(0, 0).into();
        let g: Vector4<f64> = (j.transpose() * &r).fixed_rows::<4>(0).into();
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for k in 0..4 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = t + step;
            let (tr, tj) = prob.eval(&trial);
            let tc = tr.norm_squared();
            if tc.is_finite() && tc < cost {
                let done = (cost - tc) <= 1e-15 * cost.max(1e-300) || step.norm() <= 1e-12 * (1.0 + t.norm());
                t = trial;
                r = tr;
                j = tj;
                cost = tc;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if done {
                    return (t, cost, it, true);
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // No descent direction left: a stationary point.
            return (t, cost, it, true);
        }
    }
    (t, cost, LM_MAX_ITERATIONS, false)
}

/// Fits `P_L = A·p^a + B·p^b` (`a > b`) by damped nonlinear least squares on
/// `ln P_L`, starting from single power laws fitted to the lower and upper
/// halves of the p range. A component that never carries a noticeable share
/// of the rate, or a two-term fit no better than one power law, is reported
/// as degenerate with the single-power exponent.
pub fn fit_two_powerlaw(points: &[PowerPoint]) -> Result<FitResult, AnalysisError> {
    if points.len() < 4 {
        return Err(AnalysisError::TooFewPoints("two-power-law fit", 4));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.p.total_cmp(&b.p));
    let (pmin, pmax) = (sorted[0].p, sorted[sorted.len() - 1].p);
    if pmin <= 0.0 || pmax / pmin < 10.0 * (1.0 - 1e-12) {
        return Err(AnalysisError::Invalid("two-power-law fit needs points spanning a decade in p".into()));
    }
    let single = power_line(&sorted)?;
    let half = sorted.len() / 2;
    let low = power_line(&sorted[..half.max(2)])?;
    let high = power_line(&sorted[sorted.len() - half.max(2)..])?;
    let prob = Problem {
        x: sorted.iter().map(|p| p.p.ln()).collect(),
        y: sorted.iter().map(|p| log_rate(p.p_l)).collect::<Result<_, _>>()?,
        sw: sorted.iter().map(|p| weight(p.sigma_ln).sqrt()).collect(),
    };
    let (mut a0, mut b0) = (high.slope, low.slope);
    if a0 <= b0 + 0.5 {
        a0 = single.slope + 1.0;
        b0 = single.slope - 1.0;
    }
    // Start each term at half the rate where it dominates.
    let xm_hi = prob.x[prob.x.len() - 1];
    let xm_lo = prob.x[0];
    let start = Vector4::new(
        high.intercept + high.slope * xm_hi - a0 * xm_hi - std::f64::consts::LN_2,
        a0,
        low.intercept + low.slope * xm_lo - b0 * xm_lo - std::f64::consts::LN_2,
        b0,
    );
    let (mut t, cost, iterations, converged) = levenberg_marquardt(&prob, start);
    if t[1] < t[3] {
        t = Vector4::new(t[2], t[3], t[0], t[1]);
    }
    let (share_a, share_b) = prob.shares(&t);
    let single_cost = single.residual_norm.powi(2);
    let degenerate = share_a < NEGLIGIBLE_SHARE
        || share_b < NEGLIGIBLE_SHARE
        || single_cost - cost <= 1e-6 * single_cost + 1e-18 * prob.x.len() as f64;
    let (_, j) = prob.eval(&t);
    let jtj: Matrix4<f64> = (j.transpose() * &j).fixed_view::<4, 4>(0, 0).into();
    let dof = prob.x.len().saturating_sub(4);
    let scale = if dof > 0 { cost / dof as f64 } else { 0.0 };
    let covariance = jtj
        .try_inverse()
        .map(|m| (0..4).map(|i| (0..4).map(|k| m[(i, k)] * scale).collect()).collect())
        .unwrap_or_else(|| vec![vec![f64::NAN; 4]; 4]);
    let (exponents, prefactors, residual_norm) = if degenerate {
        (
            (single.slope, single.slope),
            (single.intercept.exp(), 0.0),
            single.residual_norm,
        )
    } else {
        ((t[1], t[3]), (t[0].exp(), t[2].exp()), cost.sqrt())
    };
    Ok(FitResult {
        kind: FitKind::TwoPowerlaw,
        lambda: None,
        exponents: Some(exponents),
        prefactors: Some(prefactors),
        m: degenerate.then_some(single.slope),
        p_th: None,
        residual_norm,
        covariance,
        converged,
        degenerate,
        iterations,
    })
}
