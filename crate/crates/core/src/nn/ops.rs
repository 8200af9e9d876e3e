//! Differentiable building blocks on `[rows × channels]` activations.

use rayon::prelude::*;

use super::real::{column_dot, column_sums, matmul_nn, matmul_nt, matmul_tn, silu, silu_grad, Real, ROW_CHUNK};
use crate::codes::{RelationIndex, NO_SENDER};

/// Gather-based relational convolution over a spatial table and a set of
/// temporal offsets. Relation `k = s · temporal + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatherConv {
    /// `table[s · receivers + v]`: sender of receiver `v` under spatial relation `s`.
    pub table: Vec<u32>,
    pub spatial: usize,
    pub dts: Vec<i64>,
    pub senders: usize,
    pub receivers: usize,
}

impl GatherConv {
    pub fn from_index(index: &RelationIndex) -> Self {
        Self {
            table: index.table().to_vec(),
            spatial: index.spatial.len(),
            dts: index.temporal.clone(),
            senders: index.senders,
            receivers: index.receivers,
        }
    }

    pub fn kernel(&self) -> usize {
        self.spatial * self.dts.len()
    }

    /// `[B·R·receivers, K·c]` matrix of gathered sender states, zero where a
    /// relation falls off the grid or outside `0..R`.
    pub fn im2col<T: Real>(&self, x: &[T], batch: usize, rounds: usize, c: usize) -> Vec<T> {
        assert_eq!(x.len(), batch * rounds * self.senders * c, "im2col input shape");
        let k = self.kernel();
        let width = k * c;
        let rows = batch * rounds * self.receivers;
        let mut col = vec![T::zero(); rows * width];
        let nt = self.dts.len();
        col.par_chunks_mut(ROW_CHUNK * width.max(1)).enumerate().for_each(|(chunk, out)| {
            let first = chunk * ROW_CHUNK;
            for (i, row) in out.chunks_mut(width).enumerate() {
                let r = first + i;
                let v = r % self.receivers;
                let bt = r / self.receivers;
                let (b, t) = (bt / rounds, bt % rounds);
                for s in 0..self.spatial {
                    let u = self.table[s * self.receivers + v];
                    if u == NO_SENDER {
                        continue;
                    }
                    for (ti, &dt) in self.dts.iter().enumerate() {
                        let ts = t as i64 + dt;
                        if ts < 0 || ts >= rounds as i64 {
                            continue;
                        }
                        let src = ((b * rounds + ts as usize) * self.senders + u as usize) * c;
                        let dst = (s * nt + ti) * c;
                        row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        });
        col
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds columns back onto senders.
    pub fn col2im<T: Real>(&self, col: &[T], batch: usize, rounds: usize, c: usize) -> Vec<T> {
        let k = self.kernel();
        let width = k * c;
        assert_eq!(col.len(), batch * rounds * self.receivers * width, "col2im input shape");
        let per_batch = rounds * self.senders * c;
        let mut dx = vec![T::zero(); batch * per_batch];
        let nt = self.dts.len();
        // One batch element per task: its senders only receive from its own rows.
        dx.par_chunks_mut(per_batch.max(1)).enumerate().for_each(|(b, out)| {
            for t in 0..rounds {
                for v in 0..self.receivers {
                    let row = ((b * rounds + t) * self.receivers + v) * width;
                    for s in 0..self.spatial {
                        let u = self.table[s * self.receivers + v];
                        if u == NO_SENDER {
                            continue;
                        }
                        for (ti, &dt) in self.dts.iter().enumerate() {
                            let ts = t as i64 + dt;
                            if ts < 0 || ts >= rounds as i64 {
                                continue;
                            }
                            let dst = (ts as usize * self.senders + u as usize) * c;
                            let src = row + (s * nt + ti) * c;
                            for j in 0..c {
                                out[dst + j] += col[src + j];
                            }
                        }
                    }
                }
            }
        });
        dx
    }
}

/// `y = x·wᵀ + bias`.
pub fn linear<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, n: usize, i: usize, o: usize) -> Vec<T> {
    let mut y = matmul_nt(x, w, n, i, o);
    if let Some(b) = bias {
        add_bias(&mut y, b);
    }
    y
}

pub fn add_bias<T: Real>(y: &mut [T], b: &[T]) {
    let o = b.len();
    y.par_chunks_mut(ROW_CHUNK * o.max(1)).for_each(|chunk| {
        for row in chunk.chunks_mut(o) {
            for (a, &v) in row.iter_mut().zip(b) {
                *a += v;
            }
        }
    });
}

/// Gradients of `linear`: `(dx, dw, dbias)`.
pub fn linear_backward<T: Real>(dy: &[T], x: &[T], w: &[T], n: usize, i: usize, o: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dx = matmul_nn(dy, w, n, o, i);
    let dw = matmul_tn(dy, x, n, o, i);
    let db = column_sums(dy, o);
    (dx, dw, db)
}

/// Depthwise relational product: `y[r, c] = Σ_k w[c·K + k] · col[r, k·C + c]`.
pub fn depthwise<T: Real>(col: &[T], w: &[T], c: usize, k: usize) -> Vec<T> {
    let width = k * c;
    let rows = col.len() / width.max(1);
    let mut y = vec![T::zero(); rows * c];
    y.par_chunks_mut(ROW_CHUNK * c.max(1))
        .zip(col.par_chunks(ROW_CHUNK * width.max(1)))
        .for_each(|(yc, cc)| {
            for (yr, cr) in yc.chunks_mut(c).zip(cc.chunks(width)) {
                for (ch, out) in yr.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for kk in 0..k {
                        acc += w[ch * k + kk] * cr[kk * c + ch];
                    }
                    *out = acc;
                }
            }
        });
    y
}

/// Gradients of `depthwise`: `(dcol, dw)`.
pub fn depthwise_backward<T: Real>(dy: &[T], col: &[T], w: &[T], c: usize, k: usize) -> (Vec<T>, Vec<T>) {
    let width = k * c;
    let mut dcol = vec![T::zero(); col.len()];
    dcol.par_chunks_mut(ROW_CHUNK * width.max(1))
        .zip(dy.par_chunks(ROW_CHUNK * c.max(1)))
        .for_each(|(dc, yc)| {
            for (dr, yr) in dc.chunks_mut(width).zip(yc.chunks(c)) {
                for ch in 0..c {
                    for kk in 0..k {
                        dr[kk * c + ch] = yr[ch] * w[ch * k + kk];
                    }
                }
            }
        });
    let partials: Vec<Vec<T>> = dy
        .par_chunks(ROW_CHUNK * c.max(1))
        .zip(col.par_chunks(ROW_CHUNK * width.max(1)))
        .map(|(yc, cc)| {
            let mut dw = vec![T::zero(); c * k];
            for (yr, cr) in yc.chunks(c).zip(cc.chunks(width)) {
                for ch in 0..c {
                    for kk in 0..k {
                        dw[ch * k + kk] += yr[ch] * cr[kk * c + ch];
                    }
                }
            }
            dw
        })
        .collect();
    (dcol, super::real::sum_in_order(partials, c * k))
}

/// Per-channel scale: `y[r, c] = x[r, c] · s[c]`.
pub fn channel_scale<T: Real>(x: &[T], s: &[T]) -> Vec<T> {
    let c = s.len();
    let mut y = x.to_vec();
    y.par_chunks_mut(ROW_CHUNK * c.max(1)).for_each(|chunk| {
        for row in chunk.chunks_mut(c) {
            for (a, &v) in row.iter_mut().zip(s) {
                *a *= v;
            }
        }
    });
    y
}

pub fn silu_vec<T: Real>(x: &[T]) -> Vec<T> {
    x.par_iter().map(|&v| silu(v)).collect()
}

/// `dx = dy ⊙ silu'(x)`.
pub fn silu_backward<T: Real>(dy: &[T], x: &[T]) -> Vec<T> {
    dy.par_iter().zip(x.par_iter()).map(|(&g, &v)| g * silu_grad(v)).collect()
}

/// Saved quantities of a train-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    pub rows: usize,
}

/// Batch normalization with batch statistics over all rows.
pub fn batch_norm_train<T: Real>(x: &[T], gamma: &[T], beta: &[T], eps: f64) -> (Vec<T>, BnCache<T>) {
    let c = gamma.len();
    let rows = x.len() / c.max(1);
    let inv_n = T::one() / T::c(rows as f64);
    let mean: Vec<T> = column_sums(x, c).into_iter().map(|s| s * inv_n).collect();
    let neg_mean: Vec<T> = mean.iter().map(|&m| -m).collect();
    let mut centered = x.to_vec();
    add_bias(&mut centered, &neg_mean);
    let var: Vec<T> = column_dot(&centered, &centered, c).into_iter().map(|s| s * inv_n).collect();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::c(eps)).sqrt()).collect();
    let xhat = channel_scale(&centered, &inv_std);
    let mut y = channel_scale(&xhat, gamma);
    add_bias(&mut y, beta);
    (y, BnCache { xhat, inv_std, mean, var, rows })
}

/// Batch normalization with fixed statistics.
pub fn batch_norm_eval<T: Real>(x: &[T], gamma: &[T], beta: &[T], mean: &[T], var: &[T], eps: f64) -> Vec<T> {
    let scale: Vec<T> = gamma
        .iter()
        .zip(var)
        .map(|(&g, &v)| g / (v + T::c(eps)).sqrt())
        .collect();
    let shift: Vec<T> = beta
        .iter()
        .zip(mean)
        .zip(&scale)
        .map(|((&b, &m), &s)| b - m * s)
        .collect();
    let mut y = channel_scale(x, &scale);
    add_bias(&mut y, &shift);
    y
}

/// Gradients of train-mode batch normalization: `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Real>(dy: &[T], cache: &BnCache<T>, gamma: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let dbeta = column_sums(dy, c);
    let dgamma = column_dot(dy, &cache.xhat, c);
    let n = T::c(cache.rows as f64);
    let coef: Vec<T> = gamma.iter().zip(&cache.inv_std).map(|(&g, &s)| g * s / n).collect();
    let mut dx = vec![T::zero(); dy.len()];
    dx.par_chunks_mut(ROW_CHUNK * c.max(1))
        .zip(dy.par_chunks(ROW_CHUNK * c.max(1)))
        .zip(cache.xhat.par_chunks(ROW_CHUNK * c.max(1)))
        .for_each(|((dxc, dyc), xc)| {
            for ((dr, yr), xr) in dxc.chunks_mut(c).zip(dyc.chunks(c)).zip(xc.chunks(c)) {
                for j in 0..c {
                    dr[j] = coef[j] * (n * yr[j] - dbeta[j] - xr[j] * dgamma[j]);
                }
            }
        });
    (dx, dgamma, dbeta)
}

pub fn add_assign<T: Real>(a: &mut [T], b: &[T]) {
    assert_eq!(a.len(), b.len());
    a.par_iter_mut().zip(b.par_iter()).for_each(|(x, &y)| *x += y);
}

pub fn scale<T: Real>(a: &[T], s: T) -> Vec<T> {
    a.par_iter().map(|&v| v * s).collect()
}

/// Numerically stable binary cross-entropy with logits, averaged, and its
/// gradient with respect to the logits.
pub fn bce_with_logits<T: Real>(logits: &[T], labels: &[T]) -> (T, Vec<T>) {
    assert_eq!(logits.len(), labels.len());
    let n = T::c(logits.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        loss += z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln();
        grad.push((super::real::sigmoid(z) - y) / n);
    }
    (loss / n, grad)
}
