use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::{Mode, Model, NnError, Role};
use crate::sim::Basis;
use crate::tensor::Tensor;

/// Largest finite E4M3 magnitude.
pub const FP8_MAX: f32 = 448.0;
const NAN_CODE: u8 = 0x7f;
const MAX_CODE: u8 = 0x7e;

/// An E4M3 value: 1 sign bit, 4 exponent bits (bias 7) and 3 mantissa bits,
/// no infinities, NaN at `S.1111.111`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fp8(pub u8);

impl Fp8 {
    pub fn sign(self) -> bool {
        self.0 >> 7 == 1
    }

    pub fn exponent(self) -> u8 {
        (self.0 >> 3) & 0xf
    }

    pub fn mantissa(self) -> u8 {
        self.0 & 0x7
    }

    pub fn is_nan(self) -> bool {
        self.0 & 0x7f == NAN_CODE
    }

    pub fn to_f32(self) -> f32 {
        if self.is_nan() {
            return f32::NAN;
        }
        let m = f32::from(self.mantissa());
        let mag = match self.exponent() {
            0 => m / 8.0 * 2f32.powi(-6),
            e => (1.0 + m / 8.0) * 2f32.powi(i32::from(e) - 7),
        };
        if self.sign() {
            -mag
        } else {
            mag
        }
    }

    /// Nearest value with ties to even mantissa; magnitudes beyond 448
    /// saturate.
    pub fn from_f32(x: f32) -> Self {
        if x.is_nan() {
            return Self(NAN_CODE);
        }
        let sign = if x.is_sign_negative() { 0x80 } else { 0 };
        let a = f64::from(x.abs());
        if a >= f64::from(FP8_MAX) {
            return Self(sign | MAX_CODE);
        }
        let e = if a < 2f64.powi(-6) { -6 } else { a.log2().floor() as i32 };
        // Quantum of the binade (or of the subnormal range).
        let t = a / 2f64.powi(e - 3);
        let mut r = t.round_ties_even() as u32;
        let code = if e == -6 && r < 8 {
            r
        } else {
            let mut field = (e + 7) as u32;
            if r == 16 {
                r = 8;
                field += 1;
            }
            if field == 0 {
                field = 1;
            }
            (field << 3) | (r - 8)
        };
        Self(sign | code.min(u32::from(MAX_CODE)) as u8)
    }
}

/// `encode → decode` of `x`.
pub fn round_fp8(x: f32) -> f32 {
    Fp8::from_f32(x).to_f32()
}

/// Per-tensor scale `max|x| / 448`; 1 for an all-zero tensor.
pub fn tensor_scale(values: &[f32]) -> f32 {
    let max = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if max == 0.0 {
        1.0
    } else {
        max / FP8_MAX
    }
}

/// Simulated FP8 storage of a tensor at its own scale.
pub fn quantize_slice(values: &mut [f32]) {
    let scale = tensor_scale(values);
    values.par_iter_mut().for_each(|v| *v = round_fp8(*v / scale) * scale);
}

fn is_bias_or_norm(name: &str) -> bool {
    name.ends_with(".bias") || name.contains(".bn")
}

/// A model whose weight tensors hold FP8-representable values (per-tensor
/// scales), evaluated with activations rounded to FP8 at block boundaries.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    pub model: Model<f32>,
    pub scales: Vec<(String, f32)>,
}

/// Rounds every weight tensor to FP8. Biases and batch-norm parameters stay
/// in 32-bit, as do running statistics.
pub fn quantize_model(model: &Model<f32>) -> QuantizedModel {
    let mut q = model.clone();
    let mut scales = Vec::new();
    for p in &mut q.params {
        if p.role == Role::Buffer || is_bias_or_norm(&p.name) {
            continue;
        }
        scales.push((p.name.clone(), tensor_scale(&p.value)));
        quantize_slice(&mut p.value);
    }
    QuantizedModel { model: q, scales }
}

impl QuantizedModel {
    pub fn forward(&self, x: &Tensor<f32>, basis: Basis) -> Result<Tensor<f32>, NnError> {
        self.model.forward_with_boundary_hook(x, basis, Mode::Eval, quantize_slice)
    }
}
