use serde::{Deserialize, Serialize};

use super::AnalysisError;

pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub low: f64,
    pub high: f64,
    /// Mean predicted probability (0 for an empty bin).
    pub mean_prediction: f64,
    /// Fraction of positive labels (0 for an empty bin).
    pub frequency: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

/// Reliability diagram over `bins` equal-width bins of predicted
/// probability, with the expected calibration error
/// `Σ (count/total)·|mean prediction − frequency|`.
pub fn reliability(preds: &[f64], labels: &[bool], bins: usize) -> Result<CalibrationReport, AnalysisError> {
    if preds.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if preds.len() != labels.len() || bins == 0 {
        return Err(AnalysisError::Invalid(format!(
            "{} predictions, {} labels, {bins} bins",
            preds.len(),
            labels.len()
        )));
    }
    let mut sum = vec![0.0; bins];
    let mut pos = vec![0u64; bins];
    let mut count = vec![0u64; bins];
    for (&p, &l) in preds.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(AnalysisError::Invalid(format!("prediction {p} outside [0, 1]")));
        }
        let b = ((p * bins as f64) as usize).min(bins - 1);
        sum[b] += p;
        pos[b] += u64::from(l);
        count[b] += 1;
    }
    let total = preds.len() as f64;
    let mut ece = 0.0;
    let bins = (0..bins)
        .map(|b| {
            let n = count[b];
            let (mean, freq) = if n == 0 {
                (0.0, 0.0)
            } else {
                (sum[b] / n as f64, pos[b] as f64 / n as f64)
            };
            ece += n as f64 / total * (mean - freq).abs();
            CalibrationBin {
                low: b as f64 / bins as f64,
                high: (b + 1) as f64 / bins as f64,
                mean_prediction: mean,
                frequency: freq,
                count: n,
            }
        })
        .collect();
    Ok(CalibrationReport { bins, ece })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostSelectionPoint {
    pub threshold: f64,
    pub accepted: u64,
    pub acceptance: f64,
    /// Block error rate among accepted shots (0 when none are accepted).
    pub error_rate: f64,
}

/// Acceptance and error curves for confidence thresholds. `preds` holds
/// `observables` flip probabilities per shot, `labels` the true flips in the
/// same layout. A shot's confidence is the smallest `max(p, 1 − p)` over
/// its observables; it fails if any thresholded prediction is wrong.
pub fn post_select(
    preds: &[f64],
    labels: &[bool],
    observables: usize,
    thresholds: &[f64],
) -> Result<Vec<PostSelectionPoint>, AnalysisError> {
    if observables == 0 || preds.len() != labels.len() || preds.len() % observables != 0 {
        return Err(AnalysisError::Invalid("predictions and labels disagree in layout".into()));
    }
    let shots: Vec<(f64, bool)> = preds
        .chunks(observables)
        .zip(labels.chunks(observables))
        .map(|(p, l)| {
            let conf = p.iter().map(|&x| x.max(1.0 - x)).fold(1.0, f64::min);
            let fail = p.iter().zip(l).any(|(&x, &y)| (x > 0.5) != y);
            (conf, fail)
        })
        .collect();
    let total = shots.len().max(1) as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let (mut accepted, mut failed) = (0u64, 0u64);
            for &(c, f) in &shots {
                if c >= tau {
                    accepted += 1;
                    failed += u64::from(f);
                }
            }
            PostSelectionPoint {
                threshold: tau,
                accepted,
                acceptance: accepted as f64 / total,
                error_rate: if accepted == 0 { 0.0 } else { failed as f64 / accepted as f64 },
            }
        })
        .collect())
}

/// Discard rate per cycle equivalent to an overall acceptance after `rounds`.
pub fn per_cycle_discard(acceptance: f64, rounds: usize) -> f64 {
    1.0 - acceptance.powf(1.0 / rounds as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn calibrated_predictor_has_small_ece() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let preds: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = preds.iter().map(|&p| rng.random::<f64>() < p).collect();
        let r = reliability(&preds, &labels, DEFAULT_BINS).unwrap();
        assert!(r.ece < 0.01, "{}", r.ece);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<u64>(), n as u64);
    }

    #[test]
    fn exact_and_constant_predictions() {
        let labels = [true, false, false, true];
        let preds: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
        assert_eq!(reliability(&preds, &labels, 15).unwrap().ece, 0.0);
        let half = reliability(&[0.5; 4], &labels, 15).unwrap();
        assert!(half.ece.abs() < 1e-15);
        assert!(matches!(reliability(&[], &[], 15), Err(AnalysisError::Empty)));
        assert!(reliability(&[1.5], &[true], 15).is_err());
    }

    #[test]
    fn post_selection_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let preds: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = preds.iter().map(|&p| rng.random::<f64>() < p).collect();
        let base = preds.iter().zip(&labels).filter(|(&p, &l)| (p > 0.5) != l).count() as f64 / 2000.0;
        let curve = post_select(&preds, &labels, 1, &[0.0, 0.9, 1.0]).unwrap();
        assert_eq!(curve[0].acceptance, 1.0);
        assert_eq!(curve[0].error_rate, base);
        assert!(curve[1].error_rate < base);
        let perfect: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let tight = post_select(&perfect, &labels, 1, &[1.0]).unwrap();
        assert_eq!((tight[0].acceptance, tight[0].error_rate), (1.0, 0.0));
    }

    #[test]
    fn mixture_matches_closed_form() {
        // Confidence c uniform on [1/2, 1], prediction correct with
        // probability c: acceptance 2(1 − τ), error among accepted (1 − τ)/2.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400_000;
        let mut preds = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0.5..1.0);
            preds.push(c);
            labels.push(rng.random::<f64>() < c);
        }
        for point in post_select(&preds, &labels, 1, &[0.6, 0.75, 0.9]).unwrap() {
            let tau = point.threshold;
            let acc = 2.0 * (1.0 - tau);
            let err = (1.0 - tau) / 2.0;
            let sa = (acc * (1.0 - acc) / n as f64).sqrt();
            let se = (err * (1.0 - err) / point.accepted as f64).sqrt();
            assert!((point.acceptance - acc).abs() < 4.0 * sa);
            assert!((point.error_rate - err).abs() < 4.0 * se);
        }
    }

    #[test]
    fn discard_rate_per_cycle() {
        assert!((per_cycle_discard(0.95f64.powi(10), 10) - 0.05).abs() < 1e-12);
        assert_eq!(per_cycle_discard(1.0, 3), 0.0);
    }
}
