//! Scalar abstraction and row-chunked dense kernels.
//!
//! Reductions over rows are split into fixed-size chunks whose partial
//! results are combined in chunk order, so results are bit-identical for any
//! thread count.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rayon::prelude::*;

/// Rows per parallel work item.
pub const ROW_CHUNK: usize = 256;

pub trait Real: Float + NumAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn c(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// `c ← alpha·a·b + beta·c` on strided row-major views.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        rsc: isize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm view out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn c(x: f64) -> Self {
                x as $t
            }

            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
                rsc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, 1);
                // SAFETY: every view was bounds-checked above and `c` is a
                // unique borrow disjoint from `a` and `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// `y[N×O] = x[N×I] · w[O×I]ᵀ`.
pub fn matmul_nt<T: Real>(x: &[T], w: &[T], n: usize, i: usize, o: usize) -> Vec<T> {
    assert_eq!(x.len(), n * i);
    assert_eq!(w.len(), o * i);
    let mut y = vec![T::zero(); n * o];
    y.par_chunks_mut(ROW_CHUNK * o.max(1))
        .zip(x.par_chunks(ROW_CHUNK * i.max(1)))
        .for_each(|(yc, xc)| {
            let rows = yc.len() / o.max(1);
            T::gemm(rows, i, o, xc, (i as isize, 1), w, (1, i as isize), T::zero(), yc, o as isize);
        });
    y
}

/// `dx[N×I] = dy[N×O] · w[O×I]`.
pub fn matmul_nn<T: Real>(dy: &[T], w: &[T], n: usize, o: usize, i: usize) -> Vec<T> {
    assert_eq!(dy.len(), n * o);
    assert_eq!(w.len(), o * i);
    let mut dx = vec![T::zero(); n * i];
    dx.par_chunks_mut(ROW_CHUNK * i.max(1))
        .zip(dy.par_chunks(ROW_CHUNK * o.max(1)))
        .for_each(|(xc, yc)| {
            let rows = xc.len() / i.max(1);
            T::gemm(rows, o, i, yc, (o as isize, 1), w, (i as isize, 1), T::zero(), xc, i as isize);
        });
    dx
}

/// `dw[O×I] = dy[N×O]ᵀ · x[N×I]`, reduced chunk by chunk in order.
pub fn matmul_tn<T: Real>(dy: &[T], x: &[T], n: usize, o: usize, i: usize) -> Vec<T> {
    assert_eq!(dy.len(), n * o);
    assert_eq!(x.len(), n * i);
    if n == 0 {
        return vec![T::zero(); o * i];
    }
    let partials: Vec<Vec<T>> = dy
        .par_chunks(ROW_CHUNK * o.max(1))
        .zip(x.par_chunks(ROW_CHUNK * i.max(1)))
        .map(|(yc, xc)| {
            let rows = yc.len() / o.max(1);
            let mut part = vec![T::zero(); o * i];
            T::gemm(o, rows, i, yc, (1, o as isize), xc, (i as isize, 1), T::zero(), &mut part, i as isize);
            part
        })
        .collect();
    sum_in_order(partials, o * i)
}

/// Elementwise sum of equally sized vectors, left to right.
pub fn sum_in_order<T: Real>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    for part in parts {
        for (a, b) in out.iter_mut().zip(part) {
            *a += b;
        }
    }
    out
}

/// Per-column sums of an `[N×C]` matrix.
pub fn column_sums<T: Real>(x: &[T], c: usize) -> Vec<T> {
    let partials: Vec<Vec<T>> = x
        .par_chunks(ROW_CHUNK * c.max(1))
        .map(|chunk| {
            let mut s = vec![T::zero(); c];
            for row in chunk.chunks(c) {
                for (a, &b) in s.iter_mut().zip(row) {
                    *a += b;
                }
            }
            s
        })
        .collect();
    sum_in_order(partials, c)
}

/// Per-column sums of the elementwise product of two `[N×C]` matrices.
pub fn column_dot<T: Real>(x: &[T], y: &[T], c: usize) -> Vec<T> {
    let partials: Vec<Vec<T>> = x
        .par_chunks(ROW_CHUNK * c.max(1))
        .zip(y.par_chunks(ROW_CHUNK * c.max(1)))
        .map(|(xc, yc)| {
            let mut s = vec![T::zero(); c];
            for (xr, yr) in xc.chunks(c).zip(yc.chunks(c)) {
                for ((a, &u), &v) in s.iter_mut().zip(xr).zip(yr) {
                    *a += u * v;
                }
            }
            s
        })
        .collect();
    sum_in_order(partials, c)
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// d silu / dx.
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}
