use serde::Serialize;

use super::{Mode, Model, NnError, Role};
use crate::nn::ops::bce_with_logits;
use crate::sim::Basis;
use crate::tensor::Tensor;

/// Finite-difference agreement of one parameter tensor.
#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, zero when both vanish.
    pub relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.relative_error).fold(0.0, f64::max)
    }
}

/// Gradient norms below this are treated as exactly zero.
const ZERO_NORM: f64 = 1e-9;

fn loss(model: &Model<f64>, x: &Tensor<f32>, targets: &[f64], basis: Basis) -> Result<f64, NnError> {
    let logits = model.forward(x, basis, Mode::Train)?;
    Ok(bce_with_logits(&logits.data, targets).0)
}

/// Compares analytic gradients with central finite differences, tensor by
/// tensor. `max_per_group` limits the number of probed entries (evenly
/// strided) for large tensors.
pub fn check_gradients(
    model: &Model<f64>,
    x: &Tensor<f32>,
    labels: &[bool],
    basis: Basis,
    step: f64,
    tolerance: f64,
    max_per_group: Option<usize>,
) -> Result<GradCheckReport, NnError> {
    let (_, grads, _) = model.loss_and_grad(x, labels, basis)?;
    let targets: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
    let mut probe = model.clone();
    let mut groups = Vec::new();
    for (g, param) in model.params.iter().enumerate() {
        if param.role == Role::Buffer {
            continue;
        }
        let len = param.value.len();
        let stride = max_per_group.map_or(1, |m| len.div_ceil(m.max(1)).max(1));
        let (mut diff2, mut a2, mut n2, mut checked) = (0.0, 0.0, 0.0, 0);
        for i in (0..len).step_by(stride) {
            let orig = param.value[i];
            probe.params[g].value[i] = orig + step;
            let plus = loss(&probe, x, &targets, basis)?;
            probe.params[g].value[i] = orig - step;
            let minus = loss(&probe, x, &targets, basis)?;
            probe.params[g].value[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.groups[g][i];
            diff2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            checked += 1;
        }
        let (an, nn) = (a2.sqrt(), n2.sqrt());
        let denom = an.max(nn);
        let relative_error = if denom < ZERO_NORM { 0.0 } else { diff2.sqrt() / denom };
        groups.push(GroupCheck {
            name: param.name.clone(),
            checked,
            analytic_norm: an,
            numeric_norm: nn,
            relative_error,
            passed: relative_error <= tolerance,
        });
    }
    Ok(GradCheckReport { step, tolerance, groups })
}
