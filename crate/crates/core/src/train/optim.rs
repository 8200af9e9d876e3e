//! Muon for matrix-shaped parameters and Lion for the rest.

use serde::{Deserialize, Serialize};

use crate::nn::real::{matmul_nn, matmul_nt};
use crate::nn::{Gradients, Model, Real, Role};

fn default_momentum() -> f64 {
    0.95
}

fn default_ns_steps() -> usize {
    5
}

fn default_coefficients() -> [f64; 3] {
    [3.4445, -4.7750, 2.0315]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuonConfig {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_ns_steps")]
    pub ns_steps: usize,
    /// Quintic coefficients `(a, b, c)` of `X ← aX + (bA + cA²)X`, `A = XXᵀ`.
    #[serde(default = "default_coefficients")]
    pub coefficients: [f64; 3],
}

impl Default for MuonConfig {
    fn default() -> Self {
        Self {
            momentum: default_momentum(),
            ns_steps: default_ns_steps(),
            coefficients: default_coefficients(),
        }
    }
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LionConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
}

impl Default for LionConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
        }
    }
}

fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Approximate orthogonalization `G ≈ U Σ Vᵀ ↦ U S Vᵀ` with `S` near the
/// identity, by `steps` quintic Newton–Schulz iterations on `G / ‖G‖_F`.
pub fn newton_schulz<T: Real>(g: &[T], rows: usize, cols: usize, steps: usize, coefficients: [f64; 3]) -> Vec<T> {
    assert_eq!(g.len(), rows * cols, "matrix shape");
    let norm = g.iter().map(|&v| v * v).sum::<T>().sqrt() + T::c(1e-7);
    let wide = rows <= cols;
    let (r, c) = if wide { (rows, cols) } else { (cols, rows) };
    let mut x: Vec<T> = if wide { g.to_vec() } else { transpose(g, rows, cols) };
    for v in &mut x {
        *v /= norm;
    }
    let [a, b, cc] = coefficients.map(T::c);
    for _ in 0..steps {
        let gram = matmul_nt(&x, &x, r, c, r);
        let sq = matmul_nn(&gram, &gram, r, r, r);
        let poly: Vec<T> = gram.iter().zip(&sq).map(|(&g1, &g2)| b * g1 + cc * g2).collect();
        let px = matmul_nn(&poly, &x, r, r, c);
        for (xv, &p) in x.iter_mut().zip(&px) {
            *xv = a * *xv + p;
        }
    }
    if wide {
        x
    } else {
        transpose(&x, r, c)
    }
}

/// One Muon step on a `rows × cols` matrix.
#[allow(clippy::too_many_arguments)]
pub fn muon_step(
    param: &mut [f32],
    grad: &[f32],
    momentum: &mut [f32],
    rows: usize,
    cols: usize,
    lr: f64,
    weight_decay: f64,
    cfg: &MuonConfig,
) {
    let mu = cfg.momentum as f32;
    for (m, &g) in momentum.iter_mut().zip(grad) {
        *m = mu * *m + g;
    }
    let dir = newton_schulz(momentum, rows, cols, cfg.ns_steps, cfg.coefficients);
    let scale = (rows as f64 / cols as f64).max(1.0).sqrt();
    let shrink = (1.0 - lr * weight_decay) as f32;
    let step = (lr * scale) as f32;
    for (p, &d) in param.iter_mut().zip(&dir) {
        *p = *p * shrink - step * d;
    }
}

/// One Lion step: sign of the interpolated momentum, decoupled weight decay.
pub fn lion_step(param: &mut [f32], grad: &[f32], momentum: &mut [f32], lr: f64, weight_decay: f64, cfg: &LionConfig) {
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let shrink = (1.0 - lr * weight_decay) as f32;
    let lr = lr as f32;
    for ((p, &g), m) in param.iter_mut().zip(grad).zip(momentum.iter_mut()) {
        let c = b1 * *m + (1.0 - b1) * g;
        let sign = if c > 0.0 {
            1.0
        } else if c < 0.0 {
            -1.0
        } else {
            0.0
        };
        *p = *p * shrink - lr * sign;
        *m = b2 * *m + (1.0 - b2) * g;
    }
}

/// Momentum buffers for every parameter, routed by [`Role`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub muon: MuonConfig,
    pub lion: LionConfig,
    pub weight_decay: f64,
    momentum: Vec<Vec<f32>>,
    pub steps: u64,
}

impl Optimizer {
    pub fn new(model: &Model<f32>, muon: MuonConfig, lion: LionConfig, weight_decay: f64) -> Self {
        Self {
            muon,
            lion,
            weight_decay,
            momentum: model.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            steps: 0,
        }
    }

    pub fn step(&mut self, model: &mut Model<f32>, grads: &Gradients<f32>, lr_matrix: f64, lr_vector: f64) {
        for ((p, g), m) in model.params.iter_mut().zip(&grads.groups).zip(&mut self.momentum) {
            match p.role {
                Role::Matrix => {
                    let (rows, cols) = p.matrix_dims();
                    muon_step(&mut p.value, g, m, rows, cols, lr_matrix, self.weight_decay, &self.muon);
                }
                Role::Vector => lion_step(&mut p.value, g, m, lr_vector, self.weight_decay, &self.lion),
                Role::Buffer => {}
            }
        }
        self.steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn gaussian(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn singular_values(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        DMatrix::from_row_slice(rows, cols, x).singular_values().iter().copied().collect()
    }

    #[test]
    fn quintic_lands_singular_values_in_band() {
        // The quintic trades convergence for speed: singular values settle in
        // a band around 1 instead of at 1.
        for seed in 0..100 {
            for (rows, cols) in [(16, 8), (8, 16)] {
                let g = gaussian(rows * cols, seed);
                let u = newton_schulz(&g, rows, cols, 5, default_coefficients());
                for s in singular_values(&u, rows, cols) {
                    assert!((0.65..=1.2).contains(&s), "seed {seed} {rows}x{cols}: {s}");
                }
            }
        }
    }

    #[test]
    fn quintic_gram_is_near_identity() {
        let mut worst: f64 = 0.0;
        for seed in 0..100 {
            let u = newton_schulz(&gaussian(16 * 8, seed), 16, 8, 5, default_coefficients());
            let m = DMatrix::from_row_slice(16, 8, &u);
            let gram = m.transpose() * &m - DMatrix::<f64>::identity(8, 8);
            worst = worst.max(gram.amax());
        }
        assert!(worst <= 0.55, "{worst}");
    }

    #[test]
    fn identity_keeps_its_singular_vectors() {
        let n = 8;
        let mut eye = vec![0.0f64; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let u = newton_schulz(&eye, n, n, 5, default_coefficients());
        let s = u[0];
        assert!((0.6..=1.3).contains(&s));
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { s } else { 0.0 };
                assert!((u[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn classic_cubic_converges_on_orthogonal_input() {
        // With (a, b, c) = (1.5, -0.5, 0) the iteration is the textbook one and
        // converges; an orthogonal input normalized by its Frobenius norm
        // returns to itself.
        let n = 6;
        let q = DMatrix::from_row_slice(n, n, &gaussian(n * n, 3)).qr().q();
        let flat: Vec<f64> = q.transpose().iter().copied().collect();
        let u = newton_schulz(&flat, n, n, 40, [1.5, -0.5, 0.0]);
        for (a, b) in u.iter().zip(&flat) {
            assert!((a - b).abs() < 1e-2);
        }
    }

    #[test]
    fn muon_zero_grad_only_decays() {
        let mut p = vec![1.0f32, -2.0, 0.5, 3.0];
        let mut m = vec![0.0; 4];
        muon_step(&mut p, &[0.0; 4], &mut m, 2, 2, 0.1, 0.5, &MuonConfig::default());
        assert_eq!(p, vec![0.95, -1.9, 0.475, 2.85]);
    }

    #[test]
    fn lion_sign_semantics() {
        let cfg = LionConfig::default();
        let mut p = vec![1.0f32, 2.0];
        let mut m = vec![0.0; 2];
        lion_step(&mut p, &[0.3, 5.0], &mut m, 0.01, 0.0, &cfg);
        assert_eq!(p, vec![0.99, 1.99]);
        let mut q = vec![1.0f32, 2.0];
        let mut z = vec![0.0; 2];
        lion_step(&mut q, &[0.0, 0.0], &mut z, 0.01, 0.5, &cfg);
        assert_eq!(q, vec![0.995, 1.99]);
    }

    #[test]
    fn lion_two_steps_match_recurrence() {
        let cfg = LionConfig::default();
        let (lr, wd, g) = (0.1f64, 0.01f64, -0.2f64);
        let mut p = vec![0.5f32];
        let mut m = vec![0.0f32];
        lion_step(&mut p, &[g as f32], &mut m, lr, wd, &cfg);
        lion_step(&mut p, &[g as f32], &mut m, lr, wd, &cfg);
        // Both steps see a negative interpolation, so each adds lr.
        let mut want = 0.5f64;
        let mut mom = 0.0f64;
        for _ in 0..2 {
            let c = 0.9 * mom + 0.1 * g;
            want = want * (1.0 - lr * wd) - lr * c.signum();
            mom = 0.99 * mom + 0.01 * g;
        }
        assert!((f64::from(p[0]) - want).abs() < 1e-6);
        assert!((f64::from(m[0]) - mom).abs() < 1e-7);
    }
}
