//! Relation indexing for translation-equivariant convolutions.
//!
//! A relation labels one class of edges of the convolution graph by the
//! sender's position relative to the receiver (and the temporal offset).
//! On a grid the label is the plain stencil offset. On a torus every
//! receiver is described in a canonical frame: X checks and left data qubits
//! use the identity frame, Z checks and right data qubits a reflected frame
//! with X↔Z and left↔right exchanged. This is the automorphism of bivariate
//! bicycle codes that maps `hx` onto `hz`, so both check types share one
//! kernel and each step has the published relation count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CheckType, CodeError, CssCode, Layout, TorusLayout};

/// Marker for "no sender" in a gather table.
pub const NO_SENDER: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphKind {
    CheckToCheck,
    CheckToData,
    DataToCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    /// Surface-code plaquette cell (check or padding).
    Cell,
    /// Surface-code data qubit.
    Data,
    XCheck,
    ZCheck,
    DataLeft,
    DataRight,
}

impl NodeKind {
    fn mirrored(self) -> bool {
        matches!(self, NodeKind::ZCheck | NodeKind::DataRight)
    }

    fn swap(self) -> Self {
        match self {
            NodeKind::XCheck => NodeKind::ZCheck,
            NodeKind::ZCheck => NodeKind::XCheck,
            NodeKind::DataLeft => NodeKind::DataRight,
            NodeKind::DataRight => NodeKind::DataLeft,
            other => other,
        }
    }
}

/// Spatial part of a relation, expressed in the receiver's canonical frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpatialRelation {
    pub sender: NodeKind,
    pub offset: (i64, i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub spatial: SpatialRelation,
    /// Sender time minus receiver time.
    pub dt: i64,
}

/// Enumerated relations of one convolution graph together with the spatial
/// gather table `sender = table[s * receivers + v]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationIndex {
    pub graph: GraphKind,
    pub spatial: Vec<SpatialRelation>,
    pub temporal: Vec<i64>,
    pub receivers: usize,
    pub senders: usize,
    pub receiver_kinds: Vec<NodeKind>,
    table: Vec<u32>,
}

impl RelationIndex {
    /// Relations in kernel order: spatial-major, temporal-minor.
    pub fn relations(&self) -> Vec<Relation> {
        self.spatial
            .iter()
            .flat_map(|&spatial| self.temporal.iter().map(move |&dt| Relation { spatial, dt }))
            .collect()
    }

    /// Kernel size `K`: number of weight matrices of one convolution step.
    pub fn kernel_size(&self) -> usize {
        self.spatial.len() * self.temporal.len()
    }

    pub fn sender(&self, spatial: usize, receiver: usize) -> Option<usize> {
        match self.table[spatial * self.receivers + receiver] {
            NO_SENDER => None,
            s => Some(s as usize),
        }
    }

    /// Raw gather table, `receivers` entries per spatial relation.
    pub fn table(&self) -> &[u32] {
        &self.table
    }

    /// Position of the zero-offset same-kind relation, if present.
    pub fn self_relation(&self) -> Option<usize> {
        self.spatial.iter().position(|r| {
            r.offset == (0, 0) && matches!(r.sender, NodeKind::Cell | NodeKind::XCheck)
        })
    }

    /// Every spatial edge `(receiver, sender, spatial relation)`.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for s in 0..self.spatial.len() {
            for v in 0..self.receivers {
                if let Some(u) = self.sender(s, v) {
                    out.push((v, u, s));
                }
            }
        }
        out
    }
}

/// Builds the relation index of `graph` for `code` with the given temporal
/// offsets (sender time minus receiver time).
pub fn relation_index(code: &CssCode, graph: GraphKind, temporal: &[i64]) -> Result<RelationIndex, CodeError> {
    match &code.layout {
        Layout::Grid(grid) => Ok(grid_index(grid.d, graph, temporal)),
        Layout::Torus(torus) => torus_index(code, torus, graph, temporal),
    }
}

fn grid_index(d: usize, graph: GraphKind, temporal: &[i64]) -> RelationIndex {
    let side = d + 1;
    let cell = |r: i64, c: i64| -> u32 {
        if (0..side as i64).contains(&r) && (0..side as i64).contains(&c) {
            (r as usize * side + c as usize) as u32
        } else {
            NO_SENDER
        }
    };
    let data = |r: i64, c: i64| -> u32 {
        if (0..d as i64).contains(&r) && (0..d as i64).contains(&c) {
            (r as usize * d + c as usize) as u32
        } else {
            NO_SENDER
        }
    };
    let (receivers, senders, offsets, sender_kind, receiver_kind): (usize, usize, Vec<(i64, i64)>, NodeKind, NodeKind) =
        match graph {
            GraphKind::CheckToCheck => (
                side * side,
                side * side,
                (-1..=1).flat_map(|a| (-1..=1).map(move |b| (a, b))).collect(),
                NodeKind::Cell,
                NodeKind::Cell,
            ),
            // Data qubit (r, c) touches cells (r..=r+1, c..=c+1).
            GraphKind::CheckToData => (
                d * d,
                side * side,
                (0..=1).flat_map(|a| (0..=1).map(move |b| (a, b))).collect(),
                NodeKind::Cell,
                NodeKind::Data,
            ),
            GraphKind::DataToCheck => (
                side * side,
                d * d,
                (-1..=0).flat_map(|a| (-1..=0).map(move |b| (a, b))).collect(),
                NodeKind::Data,
                NodeKind::Cell,
            ),
        };
    let recv_side = if receiver_kind == NodeKind::Data { d } else { side };
    let mut table = Vec::with_capacity(offsets.len() * receivers);
    for &(dr, dc) in &offsets {
        for v in 0..receivers {
            let (r, c) = ((v / recv_side) as i64, (v % recv_side) as i64);
            table.push(match sender_kind {
                NodeKind::Cell => cell(r + dr, c + dc),
                _ => data(r + dr, c + dc),
            });
        }
    }
    RelationIndex {
        graph,
        spatial: offsets
            .into_iter()
            .map(|offset| SpatialRelation {
                sender: sender_kind,
                offset,
            })
            .collect(),
        temporal: temporal.to_vec(),
        receivers,
        senders,
        receiver_kinds: vec![receiver_kind; receivers],
        table,
    }
}

fn check_kind(kind: CheckType) -> NodeKind {
    match kind {
        CheckType::X => NodeKind::XCheck,
        CheckType::Z => NodeKind::ZCheck,
    }
}

fn torus_index(
    code: &CssCode,
    torus: &TorusLayout,
    graph: GraphKind,
    temporal: &[i64],
) -> Result<RelationIndex, CodeError> {
    let cells = torus.cells();
    let check_node = |c: usize| {
        let (x, y, kind) = torus.check_position(c);
        (check_kind(kind), x as i64, y as i64)
    };
    let data_node = |q: usize| {
        let (x, y, side) = torus.data_position(q);
        let kind = match side {
            super::Sublattice::Left => NodeKind::DataLeft,
            super::Sublattice::Right => NodeKind::DataRight,
        };
        (kind, x as i64, y as i64)
    };
    // Tanner adjacency: check -> qubits, qubit -> checks (global indices).
    let check_support: Vec<Vec<usize>> = (0..code.num_checks()).map(|c| code.check(c).1).collect();
    let mut qubit_checks = vec![Vec::new(); code.n];
    for (c, sup) in check_support.iter().enumerate() {
        for &q in sup {
            qubit_checks[q].push(c);
        }
    }
    let (receivers, senders) = match graph {
        GraphKind::CheckToCheck => (code.num_checks(), code.num_checks()),
        GraphKind::CheckToData => (code.n, code.num_checks()),
        GraphKind::DataToCheck => (code.num_checks(), code.n),
    };
    let neighbors = |v: usize| -> Vec<usize> {
        match graph {
            GraphKind::CheckToCheck => {
                let mut out: Vec<usize> = check_support[v].iter().flat_map(|&q| qubit_checks[q].iter().copied()).collect();
                out.push(v);
                out.sort_unstable();
                out.dedup();
                out
            }
            GraphKind::CheckToData => qubit_checks[v].clone(),
            GraphKind::DataToCheck => check_support[v].clone(),
        }
    };
    let recv_node = |v: usize| match graph {
        GraphKind::CheckToData => data_node(v),
        _ => check_node(v),
    };
    let send_node = |u: usize| match graph {
        GraphKind::DataToCheck => data_node(u),
        _ => check_node(u),
    };
    let canonical = |offset: (i64, i64)| {
        let wrap = |v: i64, n: usize| {
            let r = v.rem_euclid(n as i64);
            if r > n as i64 / 2 {
                r - n as i64
            } else {
                r
            }
        };
        (wrap(offset.0, torus.l), wrap(offset.1, torus.m))
    };

    // Per receiver: label -> sender.
    let mut per_receiver: Vec<BTreeMap<SpatialRelation, usize>> = Vec::with_capacity(receivers);
    for v in 0..receivers {
        let (rk, rx, ry) = recv_node(v);
        let mut labels = BTreeMap::new();
        for u in neighbors(v) {
            let (sk, sx, sy) = send_node(u);
            let (mut dx, mut dy) = (sx - rx, sy - ry);
            let mut kind = sk;
            if rk.mirrored() {
                dx = -dx;
                dy = -dy;
                kind = kind.swap();
            }
            let label = SpatialRelation {
                sender: kind,
                offset: canonical((dx, dy)),
            };
            if labels.insert(label, u).is_some() {
                return Err(CodeError::BrokenSymmetry(rk));
            }
        }
        per_receiver.push(labels);
    }
    let reference: Vec<SpatialRelation> = per_receiver[0].keys().copied().collect();
    for (v, labels) in per_receiver.iter().enumerate() {
        if !labels.keys().copied().eq(reference.iter().copied()) {
            return Err(CodeError::BrokenSymmetry(recv_node(v).0));
        }
    }
    let mut table = vec![NO_SENDER; reference.len() * receivers];
    for (v, labels) in per_receiver.iter().enumerate() {
        for (s, label) in reference.iter().enumerate() {
            table[s * receivers + v] = labels[label] as u32;
        }
    }
    debug_assert_eq!(cells * 2, receivers.max(senders));
    Ok(RelationIndex {
        graph,
        spatial: reference,
        temporal: temporal.to_vec(),
        receivers,
        senders,
        receiver_kinds: (0..receivers).map(|v| recv_node(v).0).collect(),
        table,
    })
}
