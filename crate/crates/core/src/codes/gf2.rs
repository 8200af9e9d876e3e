//! Bit-packed dense matrices over GF(2).
//!
//! Rows are stored as runs of `u64` words so that row addition is a word-level
//! XOR. All reductions pivot on the lowest available row index, which keeps
//! every derived basis deterministic.

use std::fmt;

const WORD: usize = 64;

#[inline]
fn words_for(cols: usize) -> usize {
    cols.div_ceil(WORD)
}

/// Parity of the AND of two packed bit rows.
#[inline]
pub fn dot(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum::<u32>() & 1 == 1
}

/// Packs a list of set column indices into words.
pub fn pack(cols: usize, support: &[usize]) -> Vec<u64> {
    let mut row = vec![0u64; words_for(cols)];
    for &c in support {
        assert!(c < cols, "column {c} out of range for width {cols}");
        row[c / WORD] ^= 1 << (c % WORD);
    }
    row
}

/// Set column indices of a packed row, ascending.
pub fn support(row: &[u64]) -> Vec<usize> {
    let mut out = Vec::new();
    for (w, &word) in row.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let tz = bits.trailing_zeros() as usize;
            out.push(w * WORD + tz);
            bits &= bits - 1;
        }
    }
    out
}

/// Hamming weight of a packed row.
pub fn weight(row: &[u64]) -> usize {
    row.iter().map(|w| w.count_ones() as usize).sum()
}

/// Dense row-major GF(2) matrix.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    bits: Vec<u64>,
}

impl fmt::Debug for BinaryMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows.min(32) {
            let line: String = (0..self.cols.min(128))
                .map(|c| if self.get(r, c) { '1' } else { '.' })
                .collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            bits: vec![0; rows * stride],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from per-row lists of set columns.
    pub fn from_supports(cols: usize, rows: &[Vec<usize>]) -> Self {
        let mut m = Self::zeros(rows.len(), cols);
        for (r, sup) in rows.iter().enumerate() {
            for &c in sup {
                assert!(c < cols, "column {c} out of range for width {cols}");
                m.toggle(r, c);
            }
        }
        m
    }

    /// Builds a matrix from already packed rows of the given width.
    pub fn from_packed_rows(cols: usize, rows: &[Vec<u64>]) -> Self {
        let mut m = Self::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), m.stride);
            m.row_mut(r).copy_from_slice(row);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of `u64` words per row.
    pub fn stride(&self) -> usize {
        self.stride
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(r < self.rows && c < self.cols);
        self.bits[r * self.stride + c / WORD] >> (c % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        debug_assert!(r < self.rows && c < self.cols);
        let word = &mut self.bits[r * self.stride + c / WORD];
        let mask = 1u64 << (c % WORD);
        if value {
            *word |= mask;
        } else {
            *word &= !mask;
        }
    }

    #[inline]
    pub fn toggle(&mut self, r: usize, c: usize) {
        self.bits[r * self.stride + c / WORD] ^= 1 << (c % WORD);
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.bits[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.bits[r * self.stride..(r + 1) * self.stride]
    }

    pub fn row_support(&self, r: usize) -> Vec<usize> {
        support(self.row(r))
    }

    pub fn supports(&self) -> Vec<Vec<usize>> {
        (0..self.rows).map(|r| self.row_support(r)).collect()
    }

    pub fn row_weight(&self, r: usize) -> usize {
        weight(self.row(r))
    }

    pub fn col_support(&self, c: usize) -> Vec<usize> {
        (0..self.rows).filter(|&r| self.get(r, c)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// `row[dst] ^= row[src]`.
    pub fn add_row(&mut self, src: usize, dst: usize) {
        assert_ne!(src, dst);
        let s = self.stride;
        let (a, b) = if src < dst {
            let (lo, hi) = self.bits.split_at_mut(dst * s);
            (&lo[src * s..(src + 1) * s], &mut hi[..s])
        } else {
            let (lo, hi) = self.bits.split_at_mut(src * s);
            (&hi[..s], &mut lo[dst * s..(dst + 1) * s])
        };
        for (d, x) in b.iter_mut().zip(a) {
            *d ^= x;
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for w in 0..self.stride {
            self.bits.swap(a * self.stride + w, b * self.stride + w);
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in support(self.row(r)) {
                t.set(c, r, true);
            }
        }
        t
    }

    /// Matrix product `self · other`.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in support(self.row(r)) {
                let src = other.row(k).to_vec();
                for (d, x) in out.row_mut(r).iter_mut().zip(&src) {
                    *d ^= x;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`, computed row-against-row.
    pub fn mul_transpose(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "column counts differ");
        let mut out = Self::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            for s in 0..other.rows {
                if dot(self.row(r), other.row(s)) {
                    out.set(r, s, true);
                }
            }
        }
        out
    }

    /// `self · v` for a packed column vector `v` of length `cols`.
    pub fn mul_vec(&self, v: &[u64]) -> Vec<u64> {
        assert_eq!(v.len(), self.stride);
        let mut out = vec![0u64; words_for(self.rows)];
        for r in 0..self.rows {
            if dot(self.row(r), v) {
                out[r / WORD] |= 1 << (r % WORD);
            }
        }
        out
    }

    pub fn hstack(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "row counts differ");
        let mut out = Self::zeros(self.rows, self.cols + rhs.cols);
        for r in 0..self.rows {
            for c in support(self.row(r)) {
                out.set(r, c, true);
            }
            for c in support(rhs.row(r)) {
                out.set(r, self.cols + c, true);
            }
        }
        out
    }

    pub fn vstack(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "column counts differ");
        let mut bits = self.bits.clone();
        bits.extend_from_slice(&rhs.bits);
        Self {
            rows: self.rows + rhs.rows,
            cols: self.cols,
            stride: self.stride,
            bits,
        }
    }

    /// Reduces in place to reduced row echelon form and returns the pivot
    /// columns, one per nonzero row, in order.
    pub fn rref(&mut self) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut next = 0;
        for c in 0..self.cols {
            if next == self.rows {
                break;
            }
            let Some(p) = (next..self.rows).find(|&r| self.get(r, c)) else {
                continue;
            };
            self.swap_rows(p, next);
            for r in 0..self.rows {
                if r != next && self.get(r, c) {
                    self.add_row(next, r);
                }
            }
            pivots.push(c);
            next += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        self.clone().rref().len()
    }

    /// Basis of the right null space `{v : self·v = 0}`, one vector per row of
    /// the returned matrix. Free columns are taken in ascending order.
    pub fn kernel(&self) -> Self {
        let mut r = self.clone();
        let pivots = r.rref();
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let free: Vec<usize> = (0..self.cols).filter(|&c| !is_pivot[c]).collect();
        let mut basis = Self::zeros(free.len(), self.cols);
        for (i, &f) in free.iter().enumerate() {
            basis.set(i, f, true);
            for (row, &p) in pivots.iter().enumerate() {
                if r.get(row, f) {
                    basis.set(i, p, true);
                }
            }
        }
        basis
    }

    /// Inverse of a square matrix, or `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        assert_eq!(self.rows, self.cols, "inverse of a non-square matrix");
        let n = self.rows;
        let mut aug = self.hstack(&Self::identity(n));
        let pivots = aug.rref();
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return None;
        }
        let mut inv = Self::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                if aug.get(r, n + c) {
                    inv.set(r, c, true);
                }
            }
        }
        Some(inv)
    }

    /// Whether the packed row `v` lies in the row space of `self`.
    pub fn row_space_contains(&self, v: &[u64]) -> bool {
        let mut stacked = self.clone();
        let base = stacked.rank();
        stacked = stacked.vstack(&Self::from_packed_rows(self.cols, &[v.to_vec()]));
        stacked.rank() == base
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> BinaryMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = BinaryMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, rng.random_bool(0.5));
            }
        }
        m
    }

    #[test]
    fn identity_has_full_rank() {
        assert_eq!(BinaryMatrix::identity(70).rank(), 70);
    }

    #[test]
    fn rank_of_dependent_rows() {
        let m = BinaryMatrix::from_supports(4, &[vec![0, 1], vec![1, 2], vec![0, 2]]);
        assert_eq!(m.rank(), 2);
    }

    #[test]
    fn inverse_of_singular_is_none() {
        let m = BinaryMatrix::from_supports(2, &[vec![0, 1], vec![0, 1]]);
        assert!(m.inverse().is_none());
    }

    #[test]
    fn packed_helpers_roundtrip() {
        let row = pack(130, &[0, 63, 64, 129]);
        assert_eq!(support(&row), vec![0, 63, 64, 129]);
        assert_eq!(weight(&row), 4);
    }

    proptest! {
        #[test]
        fn kernel_vectors_are_annihilated(rows in 1usize..12, cols in 1usize..90, seed in any::<u64>()) {
            let m = random_matrix(rows, cols, seed);
            let k = m.kernel();
            prop_assert_eq!(k.rows() + m.rank(), cols);
            prop_assert!(m.mul_transpose(&k).is_zero());
            prop_assert_eq!(k.rank(), k.rows());
        }

        #[test]
        fn inverse_is_two_sided(n in 1usize..40, seed in any::<u64>()) {
            let m = random_matrix(n, n, seed);
            if let Some(inv) = m.inverse() {
                prop_assert_eq!(m.mul(&inv), BinaryMatrix::identity(n));
                prop_assert_eq!(inv.mul(&m), BinaryMatrix::identity(n));
            } else {
                prop_assert!(m.rank() < n);
            }
        }

        #[test]
        fn transpose_product_identity(r in 1usize..20, c in 1usize..70, s in 1usize..20, seed in any::<u64>()) {
            let a = random_matrix(r, c, seed);
            let b = random_matrix(s, c, seed.wrapping_add(1));
            prop_assert_eq!(a.mul_transpose(&b), a.mul(&b.transpose()));
            prop_assert!(a.rank() <= r.min(c));
        }
    }
}
