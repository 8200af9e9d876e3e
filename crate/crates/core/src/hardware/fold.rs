use serde::{Deserialize, Serialize};

use super::HardwareError;
use crate::nn::{ConvVariant, Model, Real};

/// Folds an eval-mode batch norm into the linear map feeding it:
/// `W' = s·W` per output channel (rows of `weights`), `b' = s·(b − μ) + β`
/// with `s = γ / √(σ² + ε)`.
#[allow(clippy::too_many_arguments)]
pub fn fold_batchnorm(
    weights: &[f64],
    bias: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let c = bias.len();
    let row = weights.len() / c;
    let scale: Vec<f64> = gamma.iter().zip(var).map(|(g, v)| g / (v + eps).sqrt()).collect();
    let w = weights
        .chunks(row)
        .zip(&scale)
        .flat_map(|(r, &s)| r.iter().map(move |x| x * s))
        .collect();
    let b = (0..c).map(|i| scale[i] * (bias[i] - mean[i]) + beta[i]).collect();
    (w, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Batch norms absorbed into the preceding projection or convolution.
    pub folded: Vec<String>,
    /// Batch norms kept as per-channel affine maps (they act on the residual
    /// stream, which also feeds the skip path).
    pub affine: Vec<String>,
}

fn get<T: Real>(m: &Model<T>, name: &str) -> Result<Vec<f64>, HardwareError> {
    m.param(name)
        .map(|p| p.value.iter().map(|v| v.to_f64_lossy()).collect())
        .ok_or_else(|| HardwareError::MissingParam(name.into()))
}

fn set<T: Real>(m: &mut Model<T>, name: &str, v: &[f64]) -> Result<(), HardwareError> {
    let p = m.param_mut(name).ok_or_else(|| HardwareError::MissingParam(name.into()))?;
    p.value = v.iter().map(|&x| T::c(x)).collect();
    Ok(())
}

/// Absorbs `bn2` into the down projection and `bn3` into the convolution of
/// every block, leaving those batch norms as identities (`γ = 1`, `β = 0`,
/// `μ = 0`, `σ² = 1 − ε`). The eval-mode forward is unchanged.
pub fn fold_model<T: Real>(model: &Model<T>) -> Result<(Model<T>, FoldReport), HardwareError> {
    let mut m = model.clone();
    let eps = m.config.bn_eps;
    let bipartite = m.param("block0.conv.dc").is_some();
    let mut report = FoldReport {
        folded: Vec::new(),
        affine: Vec::new(),
    };
    for l in 0..m.config.layers {
        let p = format!("block{l}");
        report.affine.push(format!("{p}.bn1"));
        let conv_out: Vec<String> = if bipartite {
            vec![format!("{p}.conv.dc"), format!("{p}.conv.self")]
        } else if m.config.variant == ConvVariant::Depthwise {
            vec![format!("{p}.conv.weight"), format!("{p}.conv.self")]
        } else {
            vec![format!("{p}.conv.weight")]
        };
        let targets = [
            (format!("{p}.bn2"), vec![format!("{p}.down.weight")], format!("{p}.down.bias")),
            (format!("{p}.bn3"), conv_out, format!("{p}.conv.bias")),
        ];
        for (bn, weights, bias) in targets {
            let gamma = get(&m, &format!("{bn}.gamma"))?;
            let beta = get(&m, &format!("{bn}.beta"))?;
            let mean = get(&m, &format!("{bn}.running_mean"))?;
            let var = get(&m, &format!("{bn}.running_var"))?;
            let b = get(&m, &bias)?;
            let mut new_bias = None;
            for w in &weights {
                let (fw, fb) = fold_batchnorm(&get(&m, w)?, &b, &gamma, &beta, &mean, &var, eps);
                set(&mut m, w, &fw)?;
                new_bias = Some(fb);
            }
            set(&mut m, &bias, &new_bias.expect("at least one weight"))?;
            let c = gamma.len();
            set(&mut m, &format!("{bn}.gamma"), &vec![1.0; c])?;
            set(&mut m, &format!("{bn}.beta"), &vec![0.0; c])?;
            set(&mut m, &format!("{bn}.running_mean"), &vec![0.0; c])?;
            set(&mut m, &format!("{bn}.running_var"), &vec![1.0 - eps; c])?;
            report.folded.push(bn);
        }
    }
    Ok((m, report))
}
