use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use twofloat::TwoFloat;

use super::AnalysisError;

fn dd(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// `a^{1/n}` for `a ≥ 0` by Newton steps from the f64 root.
fn root(a: TwoFloat, n: usize) -> TwoFloat {
    if n == 1 || a == 0.0 {
        return a;
    }
    let mut y = dd(a.hi().powf(1.0 / n as f64));
    for _ in 0..3 {
        y = y - (y.powi(n as i32) - a) / (dd(n as f64) * y.powi(n as i32 - 1));
    }
    y
}

/// [`block_error_rate`] in double-double precision. Block rates close to 1
/// carry information below f64 resolution; keep this form for inversion.
pub fn block_error_rate_extended(p_l: f64, k: usize, rounds: usize) -> TwoFloat {
    let x = (dd(1.0) - dd(2.0) * dd(p_l)).powi(rounds as i32);
    dd(1.0) - ((dd(1.0) + x) / dd(2.0)).powi(k as i32)
}

/// Block failure probability of `k` independent logical qubits, each failing
/// with probability `p_l` per cycle, after `rounds` cycles:
/// `1 − ((1 + (1 − 2p_l)^R) / 2)^k`.
pub fn block_error_rate(p_l: f64, k: usize, rounds: usize) -> f64 {
    f64::from(block_error_rate_extended(p_l, k, rounds))
}

/// [`per_cycle_error_rate`] on a double-double block rate.
pub fn per_cycle_error_rate_extended(p_block: TwoFloat, k: usize, rounds: usize) -> Result<f64, AnalysisError> {
    if !(p_block >= 0.0 && p_block < 1.0) || k == 0 || rounds == 0 {
        return Err(AnalysisError::Invalid(format!("P_block = {p_block}, k = {k}, R = {rounds}")));
    }
    let base = dd(2.0) * root(dd(1.0) - p_block, k) - dd(1.0);
    if base < 0.0 {
        return Err(AnalysisError::Domain(p_block.hi(), k));
    }
    Ok(f64::from((dd(1.0) - root(base, rounds)) / dd(2.0)))
}

/// Inverse of [`block_error_rate`]:
/// `P_L = (1 − (2(1 − P_block)^{1/k} − 1)^{1/R}) / 2`.
pub fn per_cycle_error_rate(p_block: f64, k: usize, rounds: usize) -> Result<f64, AnalysisError> {
    per_cycle_error_rate_extended(dd(p_block), k, rounds)
}

/// [`per_cycle_error_rate`] with the out-of-range region mapped to 0.5.
pub fn per_cycle_error_rate_clamped(p_block: f64, k: usize, rounds: usize) -> f64 {
    per_cycle_error_rate(p_block.clamp(0.0, 1.0 - f64::EPSILON), k, rounds).unwrap_or(0.5)
}

/// Equal-tailed Jeffreys interval (Beta(½, ½) prior) on a binomial rate.
/// The lower bound is 0 when no failures were seen and the upper bound is 1
/// when every shot failed.
pub fn credible_interval(failures: u64, shots: u64, level: f64) -> (f64, f64) {
    assert!(failures <= shots && shots > 0, "need 0 ≤ failures ≤ shots and shots > 0");
    let posterior = Beta::new(failures as f64 + 0.5, (shots - failures) as f64 + 0.5).expect("positive shapes");
    let tail = (1.0 - level) / 2.0;
    let low = if failures == 0 { 0.0 } else { posterior.inverse_cdf(tail) };
    let high = if failures == shots { 1.0 } else { posterior.inverse_cdf(1.0 - tail) };
    (low, high)
}

/// One point of an error-rate curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRatePoint {
    pub p: f64,
    pub p_block: f64,
    pub p_l: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub shots: u64,
    pub failures: u64,
}

impl ErrorRatePoint {
    /// Estimates and 95% interval from a failure count; interval bounds are
    /// mapped through the per-cycle conversion, which is monotone.
    pub fn from_counts(p: f64, failures: u64, shots: u64, k: usize, rounds: usize) -> Self {
        Self::with_level(p, failures, shots, k, rounds, 0.95)
    }

    pub fn with_level(p: f64, failures: u64, shots: u64, k: usize, rounds: usize, level: f64) -> Self {
        let p_block = failures as f64 / shots as f64;
        let (lo, hi) = credible_interval(failures, shots, level);
        Self {
            p,
            p_block,
            p_l: per_cycle_error_rate_clamped(p_block, k, rounds),
            ci_low: per_cycle_error_rate_clamped(lo, k, rounds),
            ci_high: per_cycle_error_rate_clamped(hi, k, rounds),
            shots,
            failures,
        }
    }
}

pub fn write_curve<W: Write>(points: &[ErrorRatePoint], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_curve<R: Read>(input: R) -> Result<Vec<ErrorRatePoint>, AnalysisError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Forward formula through `exp_m1`/`ln_1p`, free of cancellation.
    fn forward_oracle(p_l: f64, k: usize, rounds: usize) -> f64 {
        let decay = (rounds as f64 * (-2.0 * p_l).ln_1p()).exp_m1();
        -(k as f64 * (decay / 2.0).ln_1p()).exp_m1()
    }

    fn grid() -> Vec<f64> {
        let mut v: Vec<f64> = (0..=50).map(|i| 10f64.powf(-6.0 + 5.0 * i as f64 / 50.0)).collect();
        v.extend([0.2, 0.3, 0.4]);
        v
    }

    #[test]
    fn forward_matches_log_form() {
        for p in grid() {
            for (k, r) in [(1, 1), (1, 12), (12, 1), (12, 12)] {
                let f = block_error_rate(p, k, r);
                let o = forward_oracle(p, k, r);
                assert!((f - o).abs() <= 1e-14 * o.max(1e-300) + 1e-17, "{p} {k} {r}: {f} vs {o}");
            }
        }
    }

    #[test]
    fn roundtrip_is_identity() {
        for p in grid() {
            for (k, r) in [(1, 1), (1, 12), (12, 1), (12, 12)] {
                let back = per_cycle_error_rate_extended(block_error_rate_extended(p, k, r), k, r).unwrap();
                assert!((back - p).abs() <= 1e-12 * p, "{p} {k} {r}: {back}");
            }
        }
    }

    #[test]
    fn f64_roundtrip_away_from_saturation() {
        for p in grid() {
            for (k, r) in [(1, 1), (1, 12), (12, 1), (12, 12)] {
                // Near saturation the block rate resolves P_L only to ~ε/(1 − 2p)^R.
                if (1.0 - 2.0 * p).powi(r as i32) < 1e-2 {
                    continue;
                }
                let pb = block_error_rate(p, k, r);
                let back = per_cycle_error_rate(pb, k, r).unwrap();
                assert!((back - p).abs() <= 1e-12, "{p} {k} {r}: {back}");
            }
        }
    }

    #[test]
    fn landmarks() {
        assert_eq!(block_error_rate(0.0, 12, 12), 0.0);
        assert!((block_error_rate(0.5, 12, 3) - (1.0 - 2f64.powi(-12))).abs() < 1e-15);
        assert_eq!(per_cycle_error_rate(0.0, 5, 7).unwrap(), 0.0);
        let p = 0.137;
        assert!((per_cycle_error_rate(p, 1, 1).unwrap() - p).abs() < 1e-15);
        assert!(matches!(per_cycle_error_rate(0.9, 2, 1), Err(AnalysisError::Domain(..))));
        assert_eq!(per_cycle_error_rate_clamped(0.9, 2, 1), 0.5);
    }

    /// Regularized incomplete beta by the continued fraction of Numerical
    /// Recipes (modified Lentz), inverted by bisection.
    fn betai(a: f64, b: f64, x: f64) -> f64 {
        fn cf(a: f64, b: f64, x: f64) -> f64 {
            let tiny = 1e-300;
            let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
            let mut c = 1.0;
            let mut d = 1.0 - qab * x / qap;
            if d.abs() < tiny {
                d = tiny;
            }
            d = 1.0 / d;
            let mut h = d;
            for m in 1..10_000 {
                let m = m as f64;
                let m2 = 2.0 * m;
                let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
                d = 1.0 + aa * d;
                d = if d.abs() < tiny { tiny } else { d };
                c = 1.0 + aa / c;
                c = if c.abs() < tiny { tiny } else { c };
                d = 1.0 / d;
                h *= d * c;
                let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
                d = 1.0 + aa * d;
                d = if d.abs() < tiny { tiny } else { d };
                c = 1.0 + aa / c;
                c = if c.abs() < tiny { tiny } else { c };
                d = 1.0 / d;
                let del = d * c;
                h *= del;
                if (del - 1.0).abs() < 1e-16 {
                    break;
                }
            }
            h
        }
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let ln_front = statrs::function::gamma::ln_gamma(a + b)
            - statrs::function::gamma::ln_gamma(a)
            - statrs::function::gamma::ln_gamma(b)
            + a * x.ln()
            + b * (1.0 - x).ln();
        if x < (a + 1.0) / (a + b + 2.0) {
            ln_front.exp() * cf(a, b, x) / a
        } else {
            1.0 - ln_front.exp() * cf(b, a, 1.0 - x) / b
        }
    }

    fn quantile(a: f64, b: f64, target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if betai(a, b, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn jeffreys_matches_continued_fraction() {
        let (lo, hi) = credible_interval(5, 1000, 0.95);
        let (olo, ohi) = (quantile(5.5, 995.5, 0.025), quantile(5.5, 995.5, 0.975));
        assert!((lo - olo).abs() < 1e-9 * olo, "{lo} vs {olo}");
        assert!((hi - ohi).abs() < 1e-9 * ohi, "{hi} vs {ohi}");
    }

    #[test]
    fn interval_boundaries_and_symmetry() {
        assert_eq!(credible_interval(0, 100, 0.95).0, 0.0);
        assert_eq!(credible_interval(100, 100, 0.95).1, 1.0);
        let (lo, hi) = credible_interval(50, 100, 0.95);
        assert!((lo + hi - 1.0).abs() < 1e-12);
        let mut width = f64::INFINITY;
        for shots in [100u64, 1000, 10_000, 100_000] {
            let (lo, hi) = credible_interval(shots / 20, shots, 0.95);
            assert!(hi - lo < width);
            width = hi - lo;
        }
    }

    #[test]
    fn point_brackets_estimate_and_csv_roundtrips() {
        let pts = vec![
            ErrorRatePoint::from_counts(0.01, 37, 10_000, 12, 6),
            ErrorRatePoint::from_counts(0.02, 0, 10_000, 1, 1),
        ];
        for p in &pts {
            assert!(p.ci_low <= p.p_l && p.p_l <= p.ci_high && p.p_l <= 0.5);
        }
        let mut buf = Vec::new();
        write_curve(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("p,p_block,p_l,ci_low,ci_high,shots,failures"));
        assert_eq!(read_curve(buf.as_slice()).unwrap(), pts);
    }
}
