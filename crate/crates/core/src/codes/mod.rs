//! CSS code construction: rotated surface codes, bivariate bicycle codes,
//! logical operator bases and the relation (offset) indexing consumed by the
//! convolutional decoder and the cost models.

mod bb;
pub mod gf2;
mod io;
mod logicals;
mod relations;
mod surface;

pub use bb::{build_bb_code, BbPreset, Monomial};
pub use gf2::BinaryMatrix;
pub use io::CodeDocument;
pub use logicals::{logical_operators, minimum_weight_in_coset};
pub use relations::{
    relation_index, GraphKind, NodeKind, Relation, RelationIndex, SpatialRelation, NO_SENDER,
};
pub use surface::build_rotated_surface_code;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodeError {
    #[error("surface code distance must be odd and at least 3, got {0}")]
    InvalidDistance(usize),
    #[error("bivariate bicycle code needs nonempty monomial lists")]
    EmptyPolynomial,
    #[error("monomial exponent ({0}, {1}) is not reduced modulo ({2}, {3})")]
    UnreducedMonomial(usize, usize, usize, usize),
    #[error("check matrices do not commute: hx·hzᵀ ≠ 0")]
    NotCss,
    #[error("translation symmetry check failed for {0:?} receivers")]
    BrokenSymmetry(NodeKind),
    #[error("graph {0:?} is not available for this layout")]
    UnsupportedGraph(GraphKind),
    #[error("unknown code preset {0:?}")]
    UnknownPreset(String),
    #[error("malformed code document: {0}")]
    Document(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Pauli type of a stabilizer check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CheckType {
    X,
    Z,
}

/// Data-qubit sublattice of a bivariate bicycle code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sublattice {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCheck {
    pub row: usize,
    pub col: usize,
    pub kind: CheckType,
    pub boundary: bool,
}

/// Rotated surface code placement: data qubits on a `d × d` grid, checks on
/// the `(d+1) × (d+1)` grid of plaquette cells. Plaquette `(i, j)` touches
/// data qubits `(i-1..=i, j-1..=j)` that exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub d: usize,
    /// Indexed by global check index (X checks first, then Z checks).
    pub checks: Vec<GridCheck>,
}

impl GridLayout {
    pub fn side(&self) -> usize {
        self.d + 1
    }

    pub fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.side() + col
    }

    pub fn data_position(&self, q: usize) -> (usize, usize) {
        (q / self.d, q % self.d)
    }
}

/// Bivariate bicycle placement on the torus `ℤ_l × ℤ_m`.
///
/// Check `i` of either type sits at `(i / m, i % m)`. Data qubit `q < l·m` is
/// on the left sublattice at `(q / m, q % m)`; `q ≥ l·m` is on the right
/// sublattice at the position of `q - l·m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusLayout {
    pub l: usize,
    pub m: usize,
    pub a: Vec<Monomial>,
    pub b: Vec<Monomial>,
}

impl TorusLayout {
    pub fn cells(&self) -> usize {
        self.l * self.m
    }

    pub fn check_position(&self, check: usize) -> (usize, usize, CheckType) {
        let cells = self.cells();
        let kind = if check < cells { CheckType::X } else { CheckType::Z };
        let i = check % cells;
        (i / self.m, i % self.m, kind)
    }

    pub fn data_position(&self, q: usize) -> (usize, usize, Sublattice) {
        let cells = self.cells();
        let side = if q < cells {
            Sublattice::Left
        } else {
            Sublattice::Right
        };
        let i = q % cells;
        (i / self.m, i % self.m, side)
    }

    pub fn index(&self, x: i64, y: i64) -> usize {
        let x = x.rem_euclid(self.l as i64) as usize;
        let y = y.rem_euclid(self.m as i64) as usize;
        x * self.m + y
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Grid(GridLayout),
    Torus(TorusLayout),
}

/// A CSS stabilizer code with its geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CssCode {
    /// Preset id (`surface:5`, `bb144`, ...) or `custom`.
    pub name: String,
    pub n: usize,
    pub k: usize,
    /// Known distance; metadata, never recomputed for large codes.
    pub d: Option<usize>,
    pub hx: BinaryMatrix,
    pub hz: BinaryMatrix,
    /// X-type logicals (rows over `n` qubits), paired with `logicals_z` so that
    /// `logicals_x · logicals_zᵀ = I`.
    pub logicals_x: BinaryMatrix,
    pub logicals_z: BinaryMatrix,
    pub layout: Layout,
}

impl CssCode {
    pub fn num_x_checks(&self) -> usize {
        self.hx.rows()
    }

    pub fn num_z_checks(&self) -> usize {
        self.hz.rows()
    }

    pub fn num_checks(&self) -> usize {
        self.hx.rows() + self.hz.rows()
    }

    /// Type and qubit support of a check by global index.
    pub fn check(&self, index: usize) -> (CheckType, Vec<usize>) {
        let mx = self.hx.rows();
        if index < mx {
            (CheckType::X, self.hx.row_support(index))
        } else {
            (CheckType::Z, self.hz.row_support(index - mx))
        }
    }

    /// Global index of the `i`-th check of the given type.
    pub fn check_index(&self, kind: CheckType, i: usize) -> usize {
        match kind {
            CheckType::X => i,
            CheckType::Z => self.hx.rows() + i,
        }
    }

    /// Check matrix of one type.
    pub fn checks_of(&self, kind: CheckType) -> &BinaryMatrix {
        match kind {
            CheckType::X => &self.hx,
            CheckType::Z => &self.hz,
        }
    }

    /// Logicals of one Pauli type.
    pub fn logicals_of(&self, kind: CheckType) -> &BinaryMatrix {
        match kind {
            CheckType::X => &self.logicals_x,
            CheckType::Z => &self.logicals_z,
        }
    }

    /// Verifies the CSS condition and the logical operator contract.
    pub fn validate(&self) -> Result<(), CodeError> {
        if !self.hx.mul_transpose(&self.hz).is_zero() {
            return Err(CodeError::NotCss);
        }
        let k = self.n - self.hx.rank() - self.hz.rank();
        let bad = |msg: &str| Err(CodeError::Document(msg.to_string()));
        if k != self.k {
            return bad("k does not match n - rank(hx) - rank(hz)");
        }
        if self.logicals_x.rows() != k || self.logicals_z.rows() != k {
            return bad("logical count differs from k");
        }
        if !self.hz.mul_transpose(&self.logicals_x).is_zero()
            || !self.hx.mul_transpose(&self.logicals_z).is_zero()
        {
            return bad("a logical operator anticommutes with a check");
        }
        if self.logicals_x.mul_transpose(&self.logicals_z) != BinaryMatrix::identity(k) {
            return bad("logical pairing matrix is not the identity");
        }
        Ok(())
    }

    /// Builds a code from a preset id: `surface:<d>`, `bb72`, `bb144`, `bb288`.
    pub fn preset(id: &str) -> Result<Self, CodeError> {
        if let Some(d) = id.strip_prefix("surface:") {
            let d = d
                .parse::<usize>()
                .map_err(|_| CodeError::UnknownPreset(id.to_string()))?;
            return build_rotated_surface_code(d);
        }
        let preset = BbPreset::from_id(id).ok_or_else(|| CodeError::UnknownPreset(id.to_string()))?;
        preset.build()
    }
}
