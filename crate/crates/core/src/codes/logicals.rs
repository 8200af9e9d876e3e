use super::gf2::{self, BinaryMatrix};

/// Largest stabilizer rank for which coset minimization is attempted.
const MAX_COSET_RANK: usize = 20;

/// Incremental echelon basis keyed by leading column.
struct Echelon {
    rows: Vec<(usize, Vec<u64>)>,
}

impl Echelon {
    fn new() -> Self {
        Self { rows: Vec::new() }
    }

    fn reduce(&self, mut v: Vec<u64>) -> Vec<u64> {
        for (pivot, row) in &self.rows {
            if v[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (a, b) in v.iter_mut().zip(row) {
                    *a ^= b;
                }
            }
        }
        v
    }

    /// Inserts `v` if independent; returns whether it was.
    fn insert(&mut self, v: Vec<u64>) -> bool {
        let r = self.reduce(v);
        let Some(pivot) = gf2::support(&r).first().copied() else {
            return false;
        };
        // Keep every stored row free of the new pivot.
        for (_, row) in self.rows.iter_mut() {
            if row[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (a, b) in row.iter_mut().zip(&r) {
                    *a ^= b;
                }
            }
        }
        self.rows.push((pivot, r));
        true
    }
}

/// Vectors of `ker(commute_with)` independent of `rowspace(stabilizers)`,
/// chosen greedily in kernel-basis order.
fn quotient_basis(commute_with: &BinaryMatrix, stabilizers: &BinaryMatrix) -> Vec<Vec<u64>> {
    let mut ech = Echelon::new();
    for r in 0..stabilizers.rows() {
        ech.insert(stabilizers.row(r).to_vec());
    }
    let kernel = commute_with.kernel();
    let mut out = Vec::new();
    for r in 0..kernel.rows() {
        let v = kernel.row(r).to_vec();
        if ech.insert(v.clone()) {
            out.push(v);
        }
    }
    out
}

/// Minimum-weight representative of `v + rowspace(stabilizers)` by Gray-code
/// enumeration of the row space. Returns `None` when the stabilizer rank
/// exceeds the enumeration budget.
pub fn minimum_weight_in_coset(v: &[u64], stabilizers: &BinaryMatrix) -> Option<Vec<u64>> {
    let mut basis = stabilizers.clone();
    let rank = basis.rref().len();
    if rank > MAX_COSET_RANK {
        return None;
    }
    let mut cur = v.to_vec();
    let mut best = cur.clone();
    let mut best_w = gf2::weight(&cur);
    for i in 1u64..(1u64 << rank) {
        let flip = i.trailing_zeros() as usize;
        for (a, b) in cur.iter_mut().zip(basis.row(flip)) {
            *a ^= b;
        }
        let w = gf2::weight(&cur);
        if w < best_w {
            best_w = w;
            best.clone_from(&cur);
        }
    }
    Some(best)
}

/// Paired logical operator bases `(logicals_x, logicals_z)` of a CSS code.
///
/// X logicals span `ker(hz) / rowspace(hx)` and Z logicals
/// `ker(hx) / rowspace(hz)`, both picked by lowest-index pivoting. The Z basis
/// is then transformed so that `logicals_x · logicals_zᵀ = I`. When the code
/// distance is known to be at most 5, each logical is replaced by a
/// minimum-weight member of its stabilizer coset (coset moves preserve the
/// pairing).
pub fn logical_operators(
    hx: &BinaryMatrix,
    hz: &BinaryMatrix,
    distance: Option<usize>,
) -> (BinaryMatrix, BinaryMatrix) {
    let n = hx.cols();
    let lx = BinaryMatrix::from_packed_rows(n, &quotient_basis(hz, hx));
    let lz = BinaryMatrix::from_packed_rows(n, &quotient_basis(hx, hz));
    let k = lx.rows();
    if k == 0 {
        return (lx, lz);
    }
    let pairing = lx.mul_transpose(&lz);
    let fix = pairing
        .inverse()
        .expect("logical pairing of a valid CSS code is invertible")
        .transpose();
    let lz = fix.mul(&lz);
    if distance.is_some_and(|d| d <= 5) {
        let reduce = |logicals: &BinaryMatrix, stabilizers: &BinaryMatrix| {
            let rows: Option<Vec<Vec<u64>>> = (0..logicals.rows())
                .map(|r| minimum_weight_in_coset(logicals.row(r), stabilizers))
                .collect();
            rows.map(|rows| BinaryMatrix::from_packed_rows(n, &rows))
                .unwrap_or_else(|| logicals.clone())
        };
        return (reduce(&lx, hx), reduce(&lz, hz));
    }
    (lx, lz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{build_rotated_surface_code, BbPreset};

    #[test]
    fn surface_logicals_from_scratch() {
        let code = build_rotated_surface_code(3).unwrap();
        let (lx, lz) = logical_operators(&code.hx, &code.hz, Some(3));
        assert_eq!(lx.rows(), 1);
        assert_eq!(lx.row_weight(0), 3);
        assert_eq!(lz.row_weight(0), 3);
        assert!(code.hz.mul_transpose(&lx).is_zero());
        assert!(code.hx.mul_transpose(&lz).is_zero());
        assert_eq!(lx.mul_transpose(&lz), BinaryMatrix::identity(1));
    }

    #[test]
    fn no_logicals_when_k_is_zero() {
        // Repetition-style checks that fix every qubit: k = 0.
        let hx = BinaryMatrix::from_supports(2, &[vec![0, 1]]);
        let hz = BinaryMatrix::from_supports(2, &[vec![0, 1]]);
        let (lx, lz) = logical_operators(&hx, &hz, None);
        assert_eq!(lx.rows(), 0);
        assert_eq!(lz.rows(), 0);
    }

    #[test]
    fn gross_code_pairing_is_identity() {
        let code = BbPreset::Bb144.build().unwrap();
        let (lx, lz) = logical_operators(&code.hx, &code.hz, None);
        assert_eq!(lx.rows(), 12);
        // Symplectic pairing oracle: the product is the identity and both
        // sets are independent modulo the stabilizers.
        assert_eq!(lx.mul_transpose(&lz), BinaryMatrix::identity(12));
        assert_eq!(lx.vstack(&code.hx).rank(), code.hx.rank() + 12);
        assert_eq!(lz.vstack(&code.hz).rank(), code.hz.rank() + 12);
    }

    #[test]
    fn coset_minimum_never_increases_weight() {
        let code = build_rotated_surface_code(5).unwrap();
        let heavy = {
            let mut v = code.logicals_x.row(0).to_vec();
            for r in 0..4 {
                for (a, b) in v.iter_mut().zip(code.hx.row(r)) {
                    *a ^= b;
                }
            }
            v
        };
        let best = minimum_weight_in_coset(&heavy, &code.hx).unwrap();
        assert_eq!(gf2::weight(&best), 5);
    }
}
