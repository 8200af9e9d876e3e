use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::{ConvGraph, Geometry};
use super::ops::{
    add_assign, add_bias, batch_norm_backward, batch_norm_eval, batch_norm_train, bce_with_logits,
    channel_scale, depthwise, depthwise_backward, linear, linear_backward,
    scale, silu_backward, silu_vec, BnCache,
};
use super::real::{column_dot, column_sums, matmul_nn, matmul_nt, matmul_tn, sum_in_order, Real, ROW_CHUNK};
use super::NnError;
use crate::codes::CssCode;
use crate::sim::Basis;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvVariant {
    #[default]
    Standard,
    /// One scalar per relation and channel.
    Depthwise,
}

fn default_bottleneck() -> usize {
    4
}

fn default_momentum() -> f64 {
    0.1
}

fn default_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Width `H` of the residual stream.
    pub hidden: usize,
    /// Number of blocks `L`.
    pub layers: usize,
    /// Bottleneck factor `b`; the spatial step runs at width `H / b`.
    #[serde(default = "default_bottleneck")]
    pub bottleneck: usize,
    #[serde(default)]
    pub variant: ConvVariant,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_eps")]
    pub bn_eps: f64,
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(hidden: usize, layers: usize) -> Self {
        Self {
            hidden,
            layers,
            bottleneck: default_bottleneck(),
            variant: ConvVariant::Standard,
            bn_momentum: default_momentum(),
            bn_eps: default_eps(),
            init_seed: 0,
        }
    }

    pub fn narrow(&self) -> usize {
        self.hidden / self.bottleneck
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden == 0 || self.layers == 0 || self.bottleneck == 0 {
            return Err(NnError::Config("hidden, layers and bottleneck must be positive".into()));
        }
        if self.hidden % self.bottleneck != 0 {
            return Err(NnError::Config(format!(
                "bottleneck {} does not divide hidden {}",
                self.bottleneck, self.hidden
            )));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(NnError::Config("invalid batch-norm constants".into()));
        }
        Ok(())
    }
}

/// How an optimizer should treat a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Weight with two or more axes, none of them trivial. The embedding
    /// table is the exception and stays a vector.
    Matrix,
    /// Everything else that is trained.
    Vector,
    /// Running statistics: not trained.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub value: Vec<T>,
}

impl<T> Param<T> {
    /// `(rows, cols)` view: leading dimension against the rest.
    pub fn matrix_dims(&self) -> (usize, usize) {
        let rows = self.shape.first().copied().unwrap_or(1);
        (rows, self.shape.iter().skip(1).product())
    }
}

/// `∂loss/∂θ` for every tensor of a model, in parameter order. Buffers get
/// zero gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub groups: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &[Param<T>]) -> Self {
        Self {
            groups: params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        }
    }

    pub fn norm(&self) -> T {
        self.groups
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.groups {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub(super) struct BnIdx {
    pub(super) gamma: usize,
    pub(super) beta: usize,
    pub(super) mean: usize,
    pub(super) var: usize,
}

#[derive(Debug, Clone, Copy)]
pub(super) enum ConvIdx {
    Stencil { w: usize, bias: usize },
    StencilDepthwise { w: usize, own: usize, bias: usize },
    Pair { cd: usize, dc: usize, own: usize, bias: usize },
    PairDepthwise { cd: usize, dc: usize, own: usize, bias: usize },
}

#[derive(Debug, Clone, Copy)]
pub(super) struct BlockIdx {
    pub(super) bn1: BnIdx,
    pub(super) down_w: usize,
    pub(super) down_b: usize,
    pub(super) bn2: BnIdx,
    pub(super) conv: ConvIdx,
    pub(super) bn3: BnIdx,
    pub(super) up_w: usize,
    pub(super) up_b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(super) struct ReadoutIdx {
    pub(super) scatter_w: usize,
    pub(super) scatter_b: usize,
    pub(super) w1: usize,
    pub(super) b1: usize,
    pub(super) w2: usize,
    pub(super) b2: usize,
}

#[derive(Debug, Clone)]
pub(super) struct Indices {
    pub(super) embed: usize,
    pub(super) blocks: Vec<BlockIdx>,
    pub(super) readout: ReadoutIdx,
}

/// The decoder network: embedding, `L` bottleneck residual blocks and the
/// per-observable readout.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub code: CssCode,
    pub geometry: Geometry,
    pub params: Vec<Param<T>>,
    pub(super) idx: Indices,
}

struct Registry<T> {
    params: Vec<Param<T>>,
    rng: ChaCha8Rng,
}

impl<T: Real> Registry<T> {
    fn push(&mut self, name: String, shape: Vec<usize>, role: Role, value: Vec<T>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.params.push(Param { name, shape, role, value });
        self.params.len() - 1
    }

    fn gaussian(&mut self, name: String, shape: Vec<usize>, role: Role, std: f64) -> usize {
        let normal = Normal::new(0.0, std).expect("positive std");
        let len = shape.iter().product();
        let value = (0..len).map(|_| T::c(normal.sample(&mut self.rng))).collect();
        self.push(name, shape, role, value)
    }

    /// Fan-in scaled Gaussian: `std = 1/√fan_in`.
    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize, role: Role) -> usize {
        self.gaussian(name, shape, role, 1.0 / (fan_in as f64).sqrt())
    }

    fn constant(&mut self, name: String, shape: Vec<usize>, role: Role, v: f64) -> usize {
        let len = shape.iter().product();
        self.push(name, shape, role, vec![T::c(v); len])
    }

    fn bn(&mut self, prefix: &str, c: usize) -> BnIdx {
        BnIdx {
            gamma: self.constant(format!("{prefix}.gamma"), vec![c], Role::Vector, 1.0),
            beta: self.constant(format!("{prefix}.beta"), vec![c], Role::Vector, 0.0),
            mean: self.constant(format!("{prefix}.running_mean"), vec![c], Role::Buffer, 0.0),
            var: self.constant(format!("{prefix}.running_var"), vec![c], Role::Buffer, 1.0),
        }
    }
}

pub(super) struct BlockCache<T> {
    pub(super) bn1: Option<BnCache<T>>,
    pub(super) a1: Vec<T>,
    pub(super) s1: Vec<T>,
    pub(super) bn2: Option<BnCache<T>>,
    pub(super) a2: Vec<T>,
    pub(super) s2: Vec<T>,
    pub(super) conv: ConvCache<T>,
    pub(super) bn3: Option<BnCache<T>>,
    pub(super) a3: Vec<T>,
    pub(super) s3: Vec<T>,
}

pub(super) enum ConvCache<T> {
    Stencil { col: Vec<T> },
    Pair { col_cd: Vec<T>, col_dc: Vec<T> },
}

pub(super) struct ReadoutCache<T> {
    pub(super) col: Vec<T>,
    pub(super) pooled: Vec<T>,
    pub(super) z1: Vec<T>,
    pub(super) s: Vec<T>,
}

/// Activations saved by a forward pass for [`Model::backward`].
pub struct Cache<T> {
    batch: usize,
    rounds: usize,
    basis: Basis,
    mode: Mode,
    bits: Vec<u8>,
    pub(super) blocks: Vec<BlockCache<T>>,
    pub(super) readout: ReadoutCache<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, code: &CssCode) -> Result<Self, NnError> {
        config.validate()?;
        let geometry = Geometry::new(code)?;
        let h = config.hidden;
        let hb = config.narrow();
        let mut reg = Registry {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };
        let embed = reg.gaussian("embed".into(), vec![2, h], Role::Vector, 0.02);
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("block{l}");
            let bn1 = reg.bn(&format!("{p}.bn1"), h);
            let down_w = reg.weight(format!("{p}.down.weight"), vec![hb, h], h, Role::Matrix);
            let down_b = reg.constant(format!("{p}.down.bias"), vec![hb], Role::Vector, 0.0);
            let bn2 = reg.bn(&format!("{p}.bn2"), hb);
            let conv = match (&geometry.conv, config.variant) {
                (ConvGraph::Stencil(g), ConvVariant::Standard) => {
                    let k = g.kernel();
                    ConvIdx::Stencil {
                        w: reg.weight(format!("{p}.conv.weight"), vec![hb, k, hb], k * hb, Role::Matrix),
                        bias: reg.constant(format!("{p}.conv.bias"), vec![hb], Role::Vector, 0.0),
                    }
                }
                (ConvGraph::Stencil(g), ConvVariant::Depthwise) => {
                    let k = g.kernel();
                    ConvIdx::StencilDepthwise {
                        w: reg.weight(format!("{p}.conv.weight"), vec![hb, k], k + 1, Role::Matrix),
                        own: reg.weight(format!("{p}.conv.self"), vec![hb], k + 1, Role::Vector),
                        bias: reg.constant(format!("{p}.conv.bias"), vec![hb], Role::Vector, 0.0),
                    }
                }
                (ConvGraph::Bipartite { cd, dc }, ConvVariant::Standard) => ConvIdx::Pair {
                    cd: reg.weight(format!("{p}.conv.cd"), vec![hb, cd.kernel(), hb], cd.kernel() * hb, Role::Matrix),
                    dc: reg.weight(format!("{p}.conv.dc"), vec![hb, dc.kernel(), hb], dc.kernel() * hb, Role::Matrix),
                    own: reg.weight(format!("{p}.conv.self"), vec![hb, hb], hb, Role::Matrix),
                    bias: reg.constant(format!("{p}.conv.bias"), vec![hb], Role::Vector, 0.0),
                },
                (ConvGraph::Bipartite { cd, dc }, ConvVariant::Depthwise) => ConvIdx::PairDepthwise {
                    cd: reg.weight(format!("{p}.conv.cd"), vec![hb, cd.kernel()], cd.kernel(), Role::Matrix),
                    dc: reg.weight(format!("{p}.conv.dc"), vec![hb, dc.kernel()], dc.kernel() + 1, Role::Matrix),
                    own: reg.weight(format!("{p}.conv.self"), vec![hb], dc.kernel() + 1, Role::Vector),
                    bias: reg.constant(format!("{p}.conv.bias"), vec![hb], Role::Vector, 0.0),
                },
            };
            let bn3 = reg.bn(&format!("{p}.bn3"), hb);
            let up_w = reg.weight(format!("{p}.up.weight"), vec![h, hb], hb, Role::Matrix);
            let up_b = reg.constant(format!("{p}.up.bias"), vec![h], Role::Vector, 0.0);
            blocks.push(BlockIdx {
                bn1,
                down_w,
                down_b,
                bn2,
                conv,
                bn3,
                up_w,
                up_b,
            });
        }
        let kr = geometry.readout.kernel();
        let readout = ReadoutIdx {
            scatter_w: reg.weight("readout.scatter.weight".into(), vec![h, kr, h], kr * h, Role::Matrix),
            scatter_b: reg.constant("readout.scatter.bias".into(), vec![h], Role::Vector, 0.0),
            w1: reg.weight("readout.mlp1.weight".into(), vec![2 * h, h], h, Role::Matrix),
            b1: reg.constant("readout.mlp1.bias".into(), vec![2 * h], Role::Vector, 0.0),
            w2: reg.weight("readout.mlp2.weight".into(), vec![1, 2 * h], 2 * h, Role::Vector),
            b2: reg.constant("readout.mlp2.bias".into(), vec![1], Role::Vector, 0.0),
        };
        Ok(Self {
            config,
            code: code.clone(),
            geometry,
            params: reg.params,
            idx: Indices { embed, blocks, readout },
        })
    }

    /// Same model in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            code: self.code.clone(),
            geometry: self.geometry.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    role: p.role,
                    value: p.value.iter().map(|&v| U::c(v.to_f64_lossy())).collect(),
                })
                .collect(),
            idx: self.idx.clone(),
        }
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role != Role::Buffer)
            .map(|p| p.value.len())
            .sum()
    }

    fn v(&self, i: usize) -> &[T] {
        &self.params[i].value
    }

    fn skip_scale(&self) -> T {
        T::one() / T::c((2.0 * self.config.layers as f64).sqrt())
    }

    fn check_input(&self, x: &Tensor<f32>) -> Result<(usize, usize, Vec<u8>), NnError> {
        if x.shape.len() < 3 || x.shape[2..] != self.geometry.slice_shape[..] {
            return Err(NnError::Shape(format!(
                "syndrome shape {:?} does not match (shots, rounds, {:?})",
                x.shape, self.geometry.slice_shape
            )));
        }
        let bits = x.data.iter().map(|&v| u8::from(v > 0.5)).collect();
        Ok((x.shape[0], x.shape[1], bits))
    }

    pub(super) fn embed(&self, bits: &[u8]) -> Vec<T> {
        let h = self.config.hidden;
        let table = self.v(self.idx.embed);
        let p = self.geometry.positions;
        let mut out = vec![T::zero(); bits.len() * h];
        out.par_chunks_mut(ROW_CHUNK * h).enumerate().for_each(|(chunk, rows)| {
            for (i, row) in rows.chunks_mut(h).enumerate() {
                let r = chunk * ROW_CHUNK + i;
                if self.geometry.mask[r % p] {
                    let b = bits[r] as usize;
                    row.copy_from_slice(&table[b * h..(b + 1) * h]);
                }
            }
        });
        out
    }

    fn bn(&self, x: &[T], idx: BnIdx, mode: Mode) -> (Vec<T>, Option<BnCache<T>>) {
        let eps = self.config.bn_eps;
        match mode {
            Mode::Train => {
                let (y, cache) = batch_norm_train(x, self.v(idx.gamma), self.v(idx.beta), eps);
                (y, Some(cache))
            }
            Mode::Eval => (
                batch_norm_eval(x, self.v(idx.gamma), self.v(idx.beta), self.v(idx.mean), self.v(idx.var), eps),
                None,
            ),
        }
    }

    pub(super) fn conv_forward(&self, s2: &[T], conv: ConvIdx, batch: usize, rounds: usize) -> (Vec<T>, ConvCache<T>) {
        let hb = self.config.narrow();
        let n = s2.len() / hb;
        match (&self.geometry.conv, conv) {
            (ConvGraph::Stencil(g), ConvIdx::Stencil { w, bias }) => {
                let col = g.im2col(s2, batch, rounds, hb);
                let y = linear(&col, self.v(w), Some(self.v(bias)), n, g.kernel() * hb, hb);
                (y, ConvCache::Stencil { col })
            }
            (ConvGraph::Stencil(g), ConvIdx::StencilDepthwise { w, own, bias }) => {
                let col = g.im2col(s2, batch, rounds, hb);
                let mut y = depthwise(&col, self.v(w), hb, g.kernel());
                add_assign(&mut y, &channel_scale(s2, self.v(own)));
                add_bias(&mut y, self.v(bias));
                (y, ConvCache::Stencil { col })
            }
            (ConvGraph::Bipartite { cd, dc }, ConvIdx::Pair { cd: wcd, dc: wdc, own, bias }) => {
                let col_cd = cd.im2col(s2, batch, rounds, hb);
                let nd = col_cd.len() / (cd.kernel() * hb);
                let mid = matmul_nt(&col_cd, self.v(wcd), nd, cd.kernel() * hb, hb);
                let col_dc = dc.im2col(&mid, batch, rounds, hb);
                let mut y = matmul_nt(&col_dc, self.v(wdc), n, dc.kernel() * hb, hb);
                add_assign(&mut y, &matmul_nt(s2, self.v(own), n, hb, hb));
                add_bias(&mut y, self.v(bias));
                (y, ConvCache::Pair { col_cd, col_dc })
            }
            (ConvGraph::Bipartite { cd, dc }, ConvIdx::PairDepthwise { cd: wcd, dc: wdc, own, bias }) => {
                let col_cd = cd.im2col(s2, batch, rounds, hb);
                let mid = depthwise(&col_cd, self.v(wcd), hb, cd.kernel());
                let col_dc = dc.im2col(&mid, batch, rounds, hb);
                let mut y = depthwise(&col_dc, self.v(wdc), hb, dc.kernel());
                add_assign(&mut y, &channel_scale(s2, self.v(own)));
                add_bias(&mut y, self.v(bias));
                (y, ConvCache::Pair { col_cd, col_dc })
            }
            _ => unreachable!("convolution parameters match the geometry"),
        }
    }

    /// Backward of the spatial step; accumulates weight gradients and returns `d s2`.
    fn conv_backward(
        &self,
        dy: &[T],
        s2: &[T],
        cache: &ConvCache<T>,
        conv: ConvIdx,
        batch: usize,
        rounds: usize,
        grads: &mut Gradients<T>,
    ) -> Vec<T> {
        let hb = self.config.narrow();
        let n = dy.len() / hb;
        match (&self.geometry.conv, conv, cache) {
            (ConvGraph::Stencil(g), ConvIdx::Stencil { w, bias }, ConvCache::Stencil { col }) => {
                let (dcol, dw, db) = linear_backward(dy, col, self.v(w), n, g.kernel() * hb, hb);
                add_assign(&mut grads.groups[w], &dw);
                add_assign(&mut grads.groups[bias], &db);
                g.col2im(&dcol, batch, rounds, hb)
            }
            (ConvGraph::Stencil(g), ConvIdx::StencilDepthwise { w, own, bias }, ConvCache::Stencil { col }) => {
                let (dcol, dw) = depthwise_backward(dy, col, self.v(w), hb, g.kernel());
                add_assign(&mut grads.groups[w], &dw);
                add_assign(&mut grads.groups[own], &column_dot(dy, s2, hb));
                add_assign(&mut grads.groups[bias], &column_sums(dy, hb));
                let mut ds2 = g.col2im(&dcol, batch, rounds, hb);
                add_assign(&mut ds2, &channel_scale(dy, self.v(own)));
                ds2
            }
            (
                ConvGraph::Bipartite { cd, dc },
                ConvIdx::Pair { cd: wcd, dc: wdc, own, bias },
                ConvCache::Pair { col_cd, col_dc },
            ) => {
                let kcd = cd.kernel() * hb;
                let kdc = dc.kernel() * hb;
                let nd = col_cd.len() / kcd;
                add_assign(&mut grads.groups[wdc], &matmul_tn(dy, col_dc, n, hb, kdc));
                add_assign(&mut grads.groups[bias], &column_sums(dy, hb));
                add_assign(&mut grads.groups[own], &matmul_tn(dy, s2, n, hb, hb));
                let dcol_dc = matmul_nn(dy, self.v(wdc), n, hb, kdc);
                let dmid = dc.col2im(&dcol_dc, batch, rounds, hb);
                add_assign(&mut grads.groups[wcd], &matmul_tn(&dmid, col_cd, nd, hb, kcd));
                let dcol_cd = matmul_nn(&dmid, self.v(wcd), nd, hb, kcd);
                let mut ds2 = cd.col2im(&dcol_cd, batch, rounds, hb);
                add_assign(&mut ds2, &matmul_nn(dy, self.v(own), n, hb, hb));
                ds2
            }
            (
                ConvGraph::Bipartite { cd, dc },
                ConvIdx::PairDepthwise { cd: wcd, dc: wdc, own, bias },
                ConvCache::Pair { col_cd, col_dc },
            ) => {
                let (dcol_dc, dwdc) = depthwise_backward(dy, col_dc, self.v(wdc), hb, dc.kernel());
                add_assign(&mut grads.groups[wdc], &dwdc);
                add_assign(&mut grads.groups[own], &column_dot(dy, s2, hb));
                add_assign(&mut grads.groups[bias], &column_sums(dy, hb));
                let dmid = dc.col2im(&dcol_dc, batch, rounds, hb);
                let (dcol_cd, dwcd) = depthwise_backward(&dmid, col_cd, self.v(wcd), hb, cd.kernel());
                add_assign(&mut grads.groups[wcd], &dwcd);
                let mut ds2 = cd.col2im(&dcol_cd, batch, rounds, hb);
                add_assign(&mut ds2, &channel_scale(dy, self.v(own)));
                ds2
            }
            _ => unreachable!("convolution parameters match the geometry"),
        }
    }

    pub(super) fn block_forward(&self, h: Vec<T>, b: BlockIdx, mode: Mode, batch: usize, rounds: usize) -> (Vec<T>, BlockCache<T>) {
        let hd = self.config.hidden;
        let hb = self.config.narrow();
        let n = h.len() / hd;
        let (a1, bn1) = self.bn(&h, b.bn1, mode);
        let s1 = silu_vec(&a1);
        let p = linear(&s1, self.v(b.down_w), Some(self.v(b.down_b)), n, hd, hb);
        let (a2, bn2) = self.bn(&p, b.bn2, mode);
        let s2 = silu_vec(&a2);
        let (c, conv) = self.conv_forward(&s2, b.conv, batch, rounds);
        let (a3, bn3) = self.bn(&c, b.bn3, mode);
        let s3 = silu_vec(&a3);
        let mut out = linear(&s3, self.v(b.up_w), Some(self.v(b.up_b)), n, hb, hd);
        add_assign(&mut out, &scale(&h, self.skip_scale()));
        let cache = BlockCache {
            bn1,
            a1,
            s1,
            bn2,
            a2,
            s2,
            conv,
            bn3,
            a3,
            s3,
        };
        (out, cache)
    }

    fn block_backward(
        &self,
        dout: &[T],
        c: &BlockCache<T>,
        b: BlockIdx,
        batch: usize,
        rounds: usize,
        grads: &mut Gradients<T>,
    ) -> Vec<T> {
        let hd = self.config.hidden;
        let hb = self.config.narrow();
        let n = dout.len() / hd;
        let (ds3, dwu, dbu) = linear_backward(dout, &c.s3, self.v(b.up_w), n, hb, hd);
        add_assign(&mut grads.groups[b.up_w], &dwu);
        add_assign(&mut grads.groups[b.up_b], &dbu);
        let da3 = silu_backward(&ds3, &c.a3);
        let dc = self.bn_backward(&da3, c.bn3.as_ref(), b.bn3, grads);
        let ds2 = self.conv_backward(&dc, &c.s2, &c.conv, b.conv, batch, rounds, grads);
        let da2 = silu_backward(&ds2, &c.a2);
        let dp = self.bn_backward(&da2, c.bn2.as_ref(), b.bn2, grads);
        let (ds1, dwd, dbd) = linear_backward(&dp, &c.s1, self.v(b.down_w), n, hd, hb);
        add_assign(&mut grads.groups[b.down_w], &dwd);
        add_assign(&mut grads.groups[b.down_b], &dbd);
        let da1 = silu_backward(&ds1, &c.a1);
        let mut dh = self.bn_backward(&da1, c.bn1.as_ref(), b.bn1, grads);
        add_assign(&mut dh, &scale(dout, self.skip_scale()));
        dh
    }

    fn bn_backward(&self, dy: &[T], cache: Option<&BnCache<T>>, idx: BnIdx, grads: &mut Gradients<T>) -> Vec<T> {
        let cache = cache.expect("backward requires a train-mode forward");
        let (dx, dg, db) = batch_norm_backward(dy, cache, self.v(idx.gamma));
        add_assign(&mut grads.groups[idx.gamma], &dg);
        add_assign(&mut grads.groups[idx.beta], &db);
        dx
    }

    pub(super) fn readout_forward(&self, h: &[T], basis: Basis, batch: usize, rounds: usize) -> (Vec<T>, ReadoutCache<T>) {
        let hd = self.config.hidden;
        let g = &self.geometry.readout;
        let d = g.receivers;
        let r = self.idx.readout;
        let col = g.im2col(h, batch, rounds, hd);
        let feats = linear(&col, self.v(r.scatter_w), Some(self.v(r.scatter_b)), batch * rounds * d, g.kernel() * hd, hd);
        let logicals = self.geometry.logicals(basis);
        let k = logicals.len();
        let inv_r = T::one() / T::c(rounds as f64);
        let mut pooled = vec![T::zero(); batch * k * hd];
        pooled.par_chunks_mut(k * hd).enumerate().for_each(|(b, out)| {
            for (o, support) in logicals.iter().enumerate() {
                let w = inv_r / T::c(support.len() as f64);
                let dst = &mut out[o * hd..(o + 1) * hd];
                for t in 0..rounds {
                    for &q in support {
                        let src = ((b * rounds + t) * d + q) * hd;
                        for (a, &v) in dst.iter_mut().zip(&feats[src..src + hd]) {
                            *a += v * w;
                        }
                    }
                }
            }
        });
        let z1 = linear(&pooled, self.v(r.w1), Some(self.v(r.b1)), batch * k, hd, 2 * hd);
        let s = silu_vec(&z1);
        let logits = linear(&s, self.v(r.w2), Some(self.v(r.b2)), batch * k, 2 * hd, 1);
        (logits, ReadoutCache { col, pooled, z1, s })
    }

    fn readout_backward(
        &self,
        dlogits: &[T],
        c: &ReadoutCache<T>,
        basis: Basis,
        batch: usize,
        rounds: usize,
        grads: &mut Gradients<T>,
    ) -> Vec<T> {
        let hd = self.config.hidden;
        let g = &self.geometry.readout;
        let d = g.receivers;
        let r = self.idx.readout;
        let logicals = self.geometry.logicals(basis);
        let k = logicals.len();
        let (ds, dw2, db2) = linear_backward(dlogits, &c.s, self.v(r.w2), batch * k, 2 * hd, 1);
        add_assign(&mut grads.groups[r.w2], &dw2);
        add_assign(&mut grads.groups[r.b2], &db2);
        let dz1 = silu_backward(&ds, &c.z1);
        let (dpooled, dw1, db1) = linear_backward(&dz1, &c.pooled, self.v(r.w1), batch * k, hd, 2 * hd);
        add_assign(&mut grads.groups[r.w1], &dw1);
        add_assign(&mut grads.groups[r.b1], &db1);
        let inv_r = T::one() / T::c(rounds as f64);
        let mut dfeats = vec![T::zero(); batch * rounds * d * hd];
        dfeats.par_chunks_mut(rounds * d * hd).enumerate().for_each(|(b, out)| {
            for (o, support) in logicals.iter().enumerate() {
                let w = inv_r / T::c(support.len() as f64);
                let src = &dpooled[(b * k + o) * hd..(b * k + o + 1) * hd];
                for t in 0..rounds {
                    for &q in support {
                        let dst = (t * d + q) * hd;
                        for (a, &v) in out[dst..dst + hd].iter_mut().zip(src) {
                            *a += v * w;
                        }
                    }
                }
            }
        });
        let n = batch * rounds * d;
        let (dcol, dws, dbs) = linear_backward(&dfeats, &c.col, self.v(r.scatter_w), n, g.kernel() * hd, hd);
        add_assign(&mut grads.groups[r.scatter_w], &dws);
        add_assign(&mut grads.groups[r.scatter_b], &dbs);
        g.col2im(&dcol, batch, rounds, hd)
    }

    pub(super) fn run(&self, x: &Tensor<f32>, basis: Basis, mode: Mode) -> Result<(Vec<T>, Cache<T>), NnError> {
        let (batch, rounds, bits) = self.check_input(x)?;
        let mut h = self.embed(&bits);
        let mut blocks = Vec::with_capacity(self.config.layers);
        for &b in &self.idx.blocks {
            let (out, cache) = self.block_forward(h, b, mode, batch, rounds);
            blocks.push(cache);
            h = out;
        }
        let (logits, readout) = self.readout_forward(&h, basis, batch, rounds);
        Ok((
            logits,
            Cache {
                batch,
                rounds,
                basis,
                mode,
                bits,
                blocks,
                readout,
            },
        ))
    }

    /// Logits `[shots, observables]`. Pure: never touches running statistics.
    pub fn forward(&self, x: &Tensor<f32>, basis: Basis, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (logits, cache) = self.run(x, basis, mode)?;
        let k = self.geometry.logicals(basis).len();
        Ok(Tensor::from_vec(&[cache.batch, k], logits))
    }

    /// Forward pass that lets `hook` rewrite the activations entering the
    /// first block and leaving every block.
    pub fn forward_with_boundary_hook<F>(&self, x: &Tensor<f32>, basis: Basis, mode: Mode, hook: F) -> Result<Tensor<T>, NnError>
    where
        F: Fn(&mut [T]),
    {
        let (batch, rounds, bits) = self.check_input(x)?;
        let mut h = self.embed(&bits);
        hook(&mut h);
        for &b in &self.idx.blocks {
            h = self.block_forward(h, b, mode, batch, rounds).0;
            hook(&mut h);
        }
        let logits = self.readout_forward(&h, basis, batch, rounds).0;
        let k = self.geometry.logicals(basis).len();
        Ok(Tensor::from_vec(&[batch, k], logits))
    }

    /// Forward pass keeping every activation needed by [`backward`](Self::backward).
    pub fn forward_train(&self, x: &Tensor<f32>, basis: Basis) -> Result<(Tensor<T>, Cache<T>), NnError> {
        let (logits, cache) = self.run(x, basis, Mode::Train)?;
        let k = self.geometry.logicals(basis).len();
        Ok((Tensor::from_vec(&[cache.batch, k], logits), cache))
    }

    /// Backbone output `[shots, rounds, positions, H]` before the readout.
    pub fn features(&self, x: &Tensor<f32>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (batch, rounds, bits) = self.check_input(x)?;
        let mut h = self.embed(&bits);
        for &b in &self.idx.blocks {
            h = self.block_forward(h, b, mode, batch, rounds).0;
        }
        Ok(Tensor::from_vec(
            &[batch, rounds, self.geometry.positions, self.config.hidden],
            h,
        ))
    }

    /// Exact gradients of a scalar loss with `∂loss/∂logits = dlogits`.
    pub fn backward(&self, cache: &Cache<T>, dlogits: &[T]) -> Result<Gradients<T>, NnError> {
        if cache.mode != Mode::Train {
            return Err(NnError::Mode);
        }
        let (batch, rounds) = (cache.batch, cache.rounds);
        let mut grads = Gradients::zeros_like(&self.params);
        let mut dh = self.readout_backward(dlogits, &cache.readout, cache.basis, batch, rounds, &mut grads);
        for (b, c) in self.idx.blocks.iter().zip(&cache.blocks).rev() {
            dh = self.block_backward(&dh, c, *b, batch, rounds, &mut grads);
        }
        let hd = self.config.hidden;
        let p = self.geometry.positions;
        let partials: Vec<Vec<T>> = dh
            .par_chunks(ROW_CHUNK * hd)
            .enumerate()
            .map(|(chunk, rows)| {
                let mut acc = vec![T::zero(); 2 * hd];
                for (i, row) in rows.chunks(hd).enumerate() {
                    let r = chunk * ROW_CHUNK + i;
                    if self.geometry.mask[r % p] {
                        let b = cache.bits[r] as usize;
                        for (a, &v) in acc[b * hd..(b + 1) * hd].iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
                acc
            })
            .collect();
        add_assign(&mut grads.groups[self.idx.embed], &sum_in_order(partials, 2 * hd));
        Ok(grads)
    }

    /// Mean binary cross-entropy of a train-mode forward and its gradients.
    /// `labels` is `[shots × observables]`.
    pub fn loss_and_grad(&self, x: &Tensor<f32>, labels: &[bool], basis: Basis) -> Result<(T, Gradients<T>, Cache<T>), NnError> {
        let (logits, cache) = self.forward_train(x, basis)?;
        if labels.len() != logits.data.len() {
            return Err(NnError::Shape(format!(
                "{} labels for {} logits",
                labels.len(),
                logits.data.len()
            )));
        }
        let targets: Vec<T> = labels.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        let (loss, dlogits) = bce_with_logits(&logits.data, &targets);
        let grads = self.backward(&cache, &dlogits)?;
        Ok((loss, grads, cache))
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics (`momentum` weight on the new batch, unbiased variance).
    pub fn update_running_stats(&mut self, cache: &Cache<T>) {
        let m = T::c(self.config.bn_momentum);
        let one = T::one();
        let idx: Vec<(BnIdx, Option<&BnCache<T>>)> = self
            .idx
            .blocks
            .iter()
            .zip(&cache.blocks)
            .flat_map(|(b, c)| [(b.bn1, c.bn1.as_ref()), (b.bn2, c.bn2.as_ref()), (b.bn3, c.bn3.as_ref())])
            .collect();
        for (bn, c) in idx {
            let Some(c) = c else { continue };
            let unbias = if c.rows > 1 {
                T::c(c.rows as f64 / (c.rows as f64 - 1.0))
            } else {
                one
            };
            for (r, &v) in self.params[bn.mean].value.iter_mut().zip(&c.mean) {
                *r = (one - m) * *r + m * v;
            }
            for (r, &v) in self.params[bn.var].value.iter_mut().zip(&c.var) {
                *r = (one - m) * *r + m * v * unbias;
            }
        }
    }

    /// Batch-norm layers in block order as `[gamma, beta, mean, var]` parameter indices.
    pub fn batch_norms(&self) -> Vec<[usize; 4]> {
        self.idx
            .blocks
            .iter()
            .flat_map(|b| [b.bn1, b.bn2, b.bn3])
            .map(|bn| [bn.gamma, bn.beta, bn.mean, bn.var])
            .collect()
    }
}
