use serde::{Deserialize, Serialize};

use super::{logical_operators, BinaryMatrix, CodeError, CssCode, Layout, TorusLayout};

/// Monomial `x^i y^j` on `ℤ_l × ℤ_m`, stored as its exponent pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Monomial(pub usize, pub usize);

/// Published bivariate bicycle parameter sets. The generating polynomials are
/// those of the original bivariate bicycle construction (Bravyi et al., 2024).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbPreset {
    /// [[72, 12, 6]]
    Bb72,
    /// [[144, 12, 12]], the "gross" code
    Bb144,
    /// [[288, 12, 18]]
    Bb288,
}

impl BbPreset {
    pub const ALL: [BbPreset; 3] = [BbPreset::Bb72, BbPreset::Bb144, BbPreset::Bb288];

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "bb72" => Some(Self::Bb72),
            "bb144" | "gross" => Some(Self::Bb144),
            "bb288" => Some(Self::Bb288),
            _ => None,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Self::Bb72 => "bb72",
            Self::Bb144 => "bb144",
            Self::Bb288 => "bb288",
        }
    }

    /// `(l, m, A, B, distance)`.
    pub fn parameters(self) -> (usize, usize, Vec<Monomial>, Vec<Monomial>, usize) {
        let m = Monomial;
        match self {
            Self::Bb72 => (6, 6, vec![m(3, 0), m(0, 1), m(0, 2)], vec![m(0, 3), m(1, 0), m(2, 0)], 6),
            Self::Bb144 => (12, 6, vec![m(3, 0), m(0, 1), m(0, 2)], vec![m(0, 3), m(1, 0), m(2, 0)], 12),
            Self::Bb288 => (12, 12, vec![m(3, 0), m(0, 2), m(0, 7)], vec![m(0, 3), m(1, 0), m(2, 0)], 18),
        }
    }

    pub fn build(self) -> Result<CssCode, CodeError> {
        let (l, m, a, b, d) = self.parameters();
        let mut code = build_bb_code(l, m, &a, &b)?;
        code.name = self.id().to_string();
        code.d = Some(d);
        Ok(code)
    }
}

/// Circulant-structured matrix of a polynomial: row `(x, y)` has a one at
/// column `(x + i, y + j)` for every monomial `x^i y^j`.
fn polynomial_matrix(l: usize, m: usize, poly: &[Monomial]) -> BinaryMatrix {
    let cells = l * m;
    let mut mat = BinaryMatrix::zeros(cells, cells);
    for x in 0..l {
        for y in 0..m {
            for &Monomial(i, j) in poly {
                mat.toggle(x * m + y, ((x + i) % l) * m + (y + j) % m);
            }
        }
    }
    mat
}

/// Bivariate bicycle code with `hx = [A | B]` and `hz = [Bᵀ | Aᵀ]`.
pub fn build_bb_code(l: usize, m: usize, a: &[Monomial], b: &[Monomial]) -> Result<CssCode, CodeError> {
    if a.is_empty() || b.is_empty() {
        return Err(CodeError::EmptyPolynomial);
    }
    if let Some(&Monomial(i, j)) = a.iter().chain(b).find(|Monomial(i, j)| *i >= l || *j >= m) {
        return Err(CodeError::UnreducedMonomial(i, j, l, m));
    }
    let am = polynomial_matrix(l, m, a);
    let bm = polynomial_matrix(l, m, b);
    let hx = am.hstack(&bm);
    let hz = bm.transpose().hstack(&am.transpose());
    if !hx.mul_transpose(&hz).is_zero() {
        return Err(CodeError::NotCss);
    }
    let n = 2 * l * m;
    let k = n - hx.rank() - hz.rank();
    let (logicals_x, logicals_z) = logical_operators(&hx, &hz, None);
    let code = CssCode {
        name: "custom".to_string(),
        n,
        k,
        d: None,
        hx,
        hz,
        logicals_x,
        logicals_z,
        layout: Layout::Torus(TorusLayout {
            l,
            m,
            a: a.to_vec(),
            b: b.to_vec(),
        }),
    };
    code.validate()?;
    Ok(code)
}
