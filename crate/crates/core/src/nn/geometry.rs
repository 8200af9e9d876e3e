use super::ops::GatherConv;
use super::NnError;
use crate::codes::{relation_index, CssCode, GraphKind, Layout};
use crate::sim::{check_positions, slice_shape, Basis};

/// Code-specific spatial operator of a block.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvGraph {
    /// Direct check-to-check stencil (surface codes: 9 spatial × 3 temporal).
    Stencil(GatherConv),
    /// Check→data then data→check steps (bivariate bicycle codes: 6 × 2 each).
    Bipartite { cd: GatherConv, dc: GatherConv },
}

/// Everything the network needs to know about a code's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Spatial shape of one syndrome slice.
    pub slice_shape: Vec<usize>,
    /// Positions per round.
    pub positions: usize,
    /// Whether a position hosts a check (grid padding cells do not).
    pub mask: Vec<bool>,
    pub conv: ConvGraph,
    /// Check→data scatter used by the readout.
    pub readout: GatherConv,
    pub data: usize,
    pub logicals_x: Vec<Vec<usize>>,
    pub logicals_z: Vec<Vec<usize>>,
}

impl Geometry {
    pub fn new(code: &CssCode) -> Result<Self, NnError> {
        let slice = slice_shape(code);
        let positions: usize = slice.iter().product();
        let mut mask = vec![false; positions];
        for p in check_positions(code) {
            mask[p] = true;
        }
        let (conv, readout) = match &code.layout {
            Layout::Grid(_) => (
                ConvGraph::Stencil(GatherConv::from_index(&relation_index(
                    code,
                    GraphKind::CheckToCheck,
                    &[-1, 0, 1],
                )?)),
                GatherConv::from_index(&relation_index(code, GraphKind::CheckToData, &[-1, 0, 1])?),
            ),
            Layout::Torus(_) => (
                ConvGraph::Bipartite {
                    cd: GatherConv::from_index(&relation_index(code, GraphKind::CheckToData, &[0, -1])?),
                    dc: GatherConv::from_index(&relation_index(code, GraphKind::DataToCheck, &[0, 1])?),
                },
                GatherConv::from_index(&relation_index(code, GraphKind::CheckToData, &[0, -1])?),
            ),
        };
        let logicals_x = code.logicals_x.supports();
        let logicals_z = code.logicals_z.supports();
        if logicals_x.iter().chain(&logicals_z).any(Vec::is_empty) {
            return Err(NnError::Shape("observable with empty support".into()));
        }
        Ok(Self {
            slice_shape: slice,
            positions,
            mask,
            conv,
            data: readout.receivers,
            readout,
            logicals_x,
            logicals_z,
        })
    }

    /// Supports of the observables measured in a memory experiment of `basis`.
    pub fn logicals(&self, basis: Basis) -> &[Vec<usize>] {
        match basis {
            Basis::X => &self.logicals_x,
            Basis::Z => &self.logicals_z,
        }
    }

    /// Total kernel size `K` of one block's spatial operation.
    pub fn conv_kernel(&self) -> usize {
        match &self.conv {
            ConvGraph::Stencil(g) => g.kernel(),
            ConvGraph::Bipartite { cd, dc } => cd.kernel() + dc.kernel(),
        }
    }
}
