use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{batch_norm_train, depthwise, linear, GatherConv};
use super::real::{matmul_nt, silu};
use super::*;
use crate::codes::{CssCode, Layout};
use crate::sim::Basis;
use crate::tensor::Tensor;

fn code(id: &str) -> CssCode {
    CssCode::preset(id).unwrap()
}

fn model(id: &str, h: usize, l: usize, variant: ConvVariant) -> Model<f64> {
    let mut config = ModelConfig::new(h, l);
    config.variant = variant;
    config.init_seed = 7;
    Model::new(config, &code(id)).unwrap()
}

/// Adds Gaussian-ish noise to every tensor so biases and BN affine terms are
/// exercised, and moves running statistics off their defaults.
fn perturb(m: &mut Model<f64>, seed: u64, amount: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut m.params {
        for v in &mut p.value {
            let e = rng.random_range(-amount..amount);
            *v = if p.name.ends_with("running_var") { 1.0 + e.abs() } else { *v + e };
        }
    }
}

fn random_bits(shape: &[usize], density: f64, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    let data = (0..len).map(|_| f32::from(u8::from(rng.random_bool(density)))).collect();
    Tensor::from_vec(shape, data)
}

fn input(m: &Model<f64>, batch: usize, rounds: usize, seed: u64) -> Tensor<f32> {
    let mut shape = vec![batch, rounds];
    shape.extend(&m.geometry.slice_shape);
    let mut x = random_bits(&shape, 0.3, seed);
    let p = m.geometry.positions;
    for (i, v) in x.data.iter_mut().enumerate() {
        if !m.geometry.mask[i % p] {
            *v = 0.0;
        }
    }
    x
}

fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Scalar-loop relational convolution: `y[b,t,v,o] = Σ W[o,k,i]·x[b,t+dt,u,i]`.
fn dense_conv(g: &GatherConv, x: &[f64], w: &[f64], batch: usize, rounds: usize, cin: usize, cout: usize) -> Vec<f64> {
    let nt = g.dts.len();
    let k = g.kernel();
    let mut y = vec![0.0; batch * rounds * g.receivers * cout];
    for b in 0..batch {
        for t in 0..rounds {
            for v in 0..g.receivers {
                for s in 0..g.spatial {
                    let u = g.table[s * g.receivers + v];
                    if u == crate::codes::NO_SENDER {
                        continue;
                    }
                    for (ti, &dt) in g.dts.iter().enumerate() {
                        let ts = t as i64 + dt;
                        if ts < 0 || ts >= rounds as i64 {
                            continue;
                        }
                        let rel = s * nt + ti;
                        for o in 0..cout {
                            for i in 0..cin {
                                let xv = x[((b * rounds + ts as usize) * g.senders + u as usize) * cin + i];
                                y[((b * rounds + t) * g.receivers + v) * cout + o] += w[(o * k + rel) * cin + i] * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Expands a depthwise kernel `[c, K]` into block-diagonal `[c, K, c]`.
fn diagonalize(w: &[f64], c: usize, k: usize) -> Vec<f64> {
    let mut full = vec![0.0; c * k * c];
    for ch in 0..c {
        for r in 0..k {
            full[(ch * k + r) * c + ch] = w[ch * k + r];
        }
    }
    full
}

#[test]
fn embedding_selects_rows() {
    let m = model("surface:3", 8, 1, ConvVariant::Standard);
    let x = input(&m, 3, 2, 1);
    let bits: Vec<u8> = x.data.iter().map(|&v| u8::from(v > 0.5)).collect();
    let h = m.embed(&bits);
    let table = &m.param("embed").unwrap().value;
    let p = m.geometry.positions;
    for (r, &b) in bits.iter().enumerate() {
        let row = &h[r * 8..(r + 1) * 8];
        if m.geometry.mask[r % p] {
            let e = &table[b as usize * 8..(b as usize + 1) * 8];
            assert_eq!(row, e);
        } else {
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn stencil_conv_matches_dense_oracle() {
    for id in ["surface:3", "surface:5"] {
        let m = model(id, 12, 1, ConvVariant::Standard);
        let ConvGraph::Stencil(g) = &m.geometry.conv else { panic!() };
        assert_eq!(g.kernel(), 27);
        let (batch, rounds, c) = (2, 3, 3);
        let x = random_vec(batch * rounds * g.senders * c, 3);
        let w = random_vec(c * g.kernel() * c, 4);
        let col = g.im2col(&x, batch, rounds, c);
        let fast = linear(&col, &w, None, batch * rounds * g.receivers, g.kernel() * c, c);
        let slow = dense_conv(g, &x, &w, batch, rounds, c, c);
        assert!(max_abs_diff(&fast, &slow) < 1e-12);
    }
}

#[test]
fn zero_and_identity_kernels() {
    let m = model("bb72", 12, 1, ConvVariant::Standard);
    let c = 3;
    let (batch, rounds) = (1, 2);
    let x = random_vec(batch * rounds * m.geometry.positions * c, 5);
    let y = m.conv_forward(&x, m.idx.blocks[0].conv, batch, rounds).0;
    let mut zeroed = m.clone();
    for name in ["block0.conv.cd", "block0.conv.dc", "block0.conv.self", "block0.conv.bias"] {
        zeroed.param_mut(name).unwrap().value.fill(0.0);
    }
    let y0 = zeroed.conv_forward(&x, m.idx.blocks[0].conv, batch, rounds).0;
    assert!(y0.iter().all(|&v| v == 0.0));
    assert!(max_abs(&y) > 0.0);
    let own = &mut zeroed.param_mut("block0.conv.self").unwrap().value;
    for i in 0..c {
        own[i * c + i] = 1.0;
    }
    let yi = zeroed.conv_forward(&x, m.idx.blocks[0].conv, batch, rounds).0;
    assert_eq!(yi, x);
}

#[test]
fn bipartite_pair_matches_composed_dense_steps() {
    let mut m = model("bb72", 12, 1, ConvVariant::Standard);
    perturb(&mut m, 11, 0.3);
    let ConvGraph::Bipartite { cd, dc } = &m.geometry.conv else { panic!() };
    assert_eq!((cd.kernel(), dc.kernel()), (12, 12));
    let (batch, rounds, c) = (2, 3, 3);
    let x = random_vec(batch * rounds * m.geometry.positions * c, 6);
    let fast = m.conv_forward(&x, m.idx.blocks[0].conv, batch, rounds).0;
    let mid = dense_conv(cd, &x, &m.param("block0.conv.cd").unwrap().value, batch, rounds, c, c);
    let mut slow = dense_conv(dc, &mid, &m.param("block0.conv.dc").unwrap().value, batch, rounds, c, c);
    let own = matmul_nt(&x, &m.param("block0.conv.self").unwrap().value, x.len() / c, c, c);
    let bias = &m.param("block0.conv.bias").unwrap().value;
    for (i, v) in slow.iter_mut().enumerate() {
        *v += own[i] + bias[i % c];
    }
    assert!(max_abs_diff(&fast, &slow) < 1e-12);
}

#[test]
fn depthwise_matches_dense_oracle_with_diagonal_matrices() {
    for id in ["surface:3", "bb72"] {
        let mut m = model(id, 12, 1, ConvVariant::Depthwise);
        perturb(&mut m, 12, 0.3);
        let c = 3;
        let (batch, rounds) = (2, 2);
        let x = random_vec(batch * rounds * m.geometry.positions * c, 8);
        let fast = m.conv_forward(&x, m.idx.blocks[0].conv, batch, rounds).0;
        let mut slow = match &m.geometry.conv {
            ConvGraph::Stencil(g) => {
                let w = diagonalize(&m.param("block0.conv.weight").unwrap().value, c, g.kernel());
                dense_conv(g, &x, &w, batch, rounds, c, c)
            }
            ConvGraph::Bipartite { cd, dc } => {
                let wcd = diagonalize(&m.param("block0.conv.cd").unwrap().value, c, cd.kernel());
                let wdc = diagonalize(&m.param("block0.conv.dc").unwrap().value, c, dc.kernel());
                let mid = dense_conv(cd, &x, &wcd, batch, rounds, c, c);
                dense_conv(dc, &mid, &wdc, batch, rounds, c, c)
            }
        };
        let own = &m.param("block0.conv.self").unwrap().value;
        let bias = &m.param("block0.conv.bias").unwrap().value;
        for (i, v) in slow.iter_mut().enumerate() {
            *v += own[i % c] * x[i] + bias[i % c];
        }
        assert!(max_abs_diff(&fast, &slow) < 1e-12, "{id}");
    }
}

#[test]
fn depthwise_unit_weights_sum_neighbours() {
    let m = model("surface:3", 4, 1, ConvVariant::Depthwise);
    let ConvGraph::Stencil(g) = &m.geometry.conv else { panic!() };
    let k = g.kernel();
    let x = random_vec(2 * g.senders, 9);
    let col = g.im2col(&x, 1, 2, 1);
    let y = depthwise(&col, &vec![1.0; k], 1, k);
    for (r, row) in col.chunks(k).enumerate() {
        assert!((y[r] - row.iter().sum::<f64>()).abs() < 1e-12);
    }
}

#[test]
fn depthwise_parameter_count() {
    for id in ["surface:3", "bb72"] {
        let m = model(id, 16, 1, ConvVariant::Depthwise);
        let hb = 4;
        let k = m.geometry.conv_kernel();
        let conv: usize = m
            .params
            .iter()
            .filter(|p| p.name.starts_with("block0.conv.") && !p.name.ends_with("bias"))
            .map(|p| p.value.len())
            .sum();
        assert_eq!(conv, k * hb + hb, "{id}");
    }
}

#[test]
fn bb144_pair_reaches_tanner_neighbours() {
    let c = code("bb144");
    let m = model("bb144", 4, 1, ConvVariant::Standard);
    let ConvGraph::Bipartite { cd, dc } = &m.geometry.conv else { panic!() };
    let direct = crate::codes::relation_index(&c, crate::codes::GraphKind::CheckToCheck, &[0]).unwrap();
    assert_eq!(direct.spatial.len(), 22);
    let supports: Vec<BTreeSet<usize>> = (0..c.num_checks()).map(|i| c.check(i).1.into_iter().collect()).collect();
    for v in [0, 5, 77, c.num_x_checks() + 3, c.num_checks() - 1] {
        // Oracle: checks sharing a data qubit with v, v included.
        let expected: BTreeSet<usize> = (0..c.num_checks())
            .filter(|&u| !supports[u].is_disjoint(&supports[v]))
            .collect();
        assert_eq!(expected.len(), direct.spatial.len());
        let mut x = vec![0.0; c.num_checks()];
        x[v] = 1.0;
        let mid = dense_conv(cd, &x, &vec![1.0; cd.kernel()], 1, 1, 1, 1);
        let y = dense_conv(dc, &mid, &vec![1.0; dc.kernel()], 1, 1, 1, 1);
        let reached: BTreeSet<usize> = (0..c.num_checks()).filter(|&u| y[u] != 0.0).collect();
        assert_eq!(reached, expected);
    }
}

/// Straight-line recomputation of one block in train mode.
fn block_oracle(m: &Model<f64>, l: usize, h: &[f64], batch: usize, rounds: usize) -> Vec<f64> {
    let hd = m.config.hidden;
    let hb = m.config.narrow();
    let eps = m.config.bn_eps;
    let n = h.len() / hd;
    let p = |s: &str| m.param(&format!("block{l}.{s}")).unwrap().value.clone();
    let bn = |x: &[f64], c: usize, name: &str| -> Vec<f64> {
        let (gamma, beta) = (p(&format!("{name}.gamma")), p(&format!("{name}.beta")));
        let mut out = vec![0.0; x.len()];
        for ch in 0..c {
            let vals: Vec<f64> = (0..n).map(|r| x[r * c + ch]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            for r in 0..n {
                out[r * c + ch] = gamma[ch] * (vals[r] - mean) / (var + eps).sqrt() + beta[ch];
            }
        }
        out
    };
    let lin = |x: &[f64], w: &[f64], b: &[f64], i: usize, o: usize| -> Vec<f64> {
        let mut y = vec![0.0; n * o];
        for r in 0..n {
            for oo in 0..o {
                let mut acc = b[oo];
                for ii in 0..i {
                    acc += w[oo * i + ii] * x[r * i + ii];
                }
                y[r * o + oo] = acc;
            }
        }
        y
    };
    let act = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(silu).collect() };
    let s1 = act(bn(h, hd, "bn1"));
    let s2 = act(bn(&lin(&s1, &p("down.weight"), &p("down.bias"), hd, hb), hb, "bn2"));
    let ConvGraph::Stencil(g) = &m.geometry.conv else { panic!() };
    let mut c = dense_conv(g, &s2, &p("conv.weight"), batch, rounds, hb, hb);
    let cb = p("conv.bias");
    for (i, v) in c.iter_mut().enumerate() {
        *v += cb[i % hb];
    }
    let s3 = act(bn(&c, hb, "bn3"));
    let up = lin(&s3, &p("up.weight"), &p("up.bias"), hb, hd);
    let skip = 1.0 / (2.0 * m.config.layers as f64).sqrt();
    up.iter().zip(h).map(|(u, x)| u + skip * x).collect()
}

#[test]
fn block_matches_scalar_oracle() {
    let mut m = model("surface:3", 8, 2, ConvVariant::Standard);
    perturb(&mut m, 13, 0.2);
    let (batch, rounds) = (2, 3);
    let h = random_vec(batch * rounds * m.geometry.positions * 8, 14);
    for l in 0..2 {
        let fast = m.block_forward(h.clone(), m.idx.blocks[l], Mode::Train, batch, rounds).0;
        let slow = block_oracle(&m, l, &h, batch, rounds);
        assert_eq!(fast.len(), h.len());
        assert!(max_abs_diff(&fast, &slow) < 1e-10);
    }
}

#[test]
fn skip_only_block_scales_input() {
    let mut m = model("surface:3", 8, 2, ConvVariant::Standard);
    m.param_mut("block1.up.weight").unwrap().value.fill(0.0);
    let h = random_vec(2 * 16 * 8, 15);
    let out = m.block_forward(h.clone(), m.idx.blocks[1], Mode::Train, 1, 2).0;
    let expected: Vec<f64> = h.iter().map(|v| v / 2.0).collect();
    assert!(max_abs_diff(&out, &expected) < 1e-15);
}

#[test]
fn one_logit_per_observable() {
    for (id, k) in [("surface:3", 1), ("bb144", 12)] {
        let m = model(id, 8, 1, ConvVariant::Standard);
        let x = input(&m, 3, 2, 16);
        for basis in [Basis::X, Basis::Z] {
            let logits = m.forward(&x, basis, Mode::Eval).unwrap();
            assert_eq!(logits.shape, vec![3, k]);
            assert!(logits.data.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn readout_pools_constant_features() {
    let mut m = model("bb72", 8, 1, ConvVariant::Standard);
    m.param_mut("readout.scatter.weight").unwrap().value.fill(0.0);
    let bias = random_vec(8, 17);
    m.param_mut("readout.scatter.bias").unwrap().value.copy_from_slice(&bias);
    let h = random_vec(2 * 3 * m.geometry.positions * 8, 18);
    let cache = m.readout_forward(&h, Basis::Z, 2, 3).1;
    for row in cache.pooled.chunks(8) {
        assert!(max_abs_diff(row, &bias) < 1e-12);
    }
}

#[test]
fn zero_features_give_zero_logit() {
    let mut m = model("surface:3", 8, 1, ConvVariant::Standard);
    for name in ["readout.scatter.weight", "readout.mlp1.bias", "readout.mlp2.bias"] {
        m.param_mut(name).unwrap().value.fill(0.0);
    }
    let h = random_vec(16 * 8, 19);
    let (logits, _) = m.readout_forward(&h, Basis::X, 1, 1);
    assert_eq!(logits, vec![0.0]);
}

#[test]
fn eval_forward_is_pure() {
    let m = model("surface:5", 16, 3, ConvVariant::Standard).cast::<f32>();
    let x = random_bits(&[4, 3, 6, 6], 0.2, 20);
    let a = m.forward(&x, Basis::Z, Mode::Eval).unwrap();
    let b = m.forward(&x, Basis::Z, Mode::Eval).unwrap();
    assert_eq!(a.data, b.data);
    let zero = Tensor::zeros(&[2, 3, 6, 6]);
    assert!(m.forward(&zero, Basis::Z, Mode::Eval).unwrap().data.iter().all(|v| v.is_finite()));
}

#[test]
fn rejects_wrong_geometry() {
    let m = model("surface:3", 8, 1, ConvVariant::Standard);
    let x = Tensor::zeros(&[1, 2, 6, 6]);
    assert!(matches!(m.forward(&x, Basis::Z, Mode::Eval), Err(NnError::Shape(_))));
    let ok = Tensor::zeros(&[1, 2, 4, 4]);
    let (_, cache) = m.run(&ok, Basis::Z, Mode::Eval).unwrap();
    assert!(matches!(m.backward(&cache, &[0.0]), Err(NnError::Mode)));
    let mut bad = ModelConfig::new(10, 2);
    bad.bottleneck = 4;
    assert!(matches!(Model::<f64>::new(bad, &code("surface:3")), Err(NnError::Config(_))));
}

fn shift_torus(x: &[f64], layout: (usize, usize), (dx, dy): (usize, usize), per_pos: usize, slices: usize) -> Vec<f64> {
    let (l, m) = layout;
    let cells = l * m;
    let mut out = vec![0.0; x.len()];
    for s in 0..slices {
        for kind in 0..2 {
            for i in 0..cells {
                let j = ((i / m + dx) % l) * m + (i % m + dy) % m;
                let src = ((s * 2 + kind) * cells + i) * per_pos;
                let dst = ((s * 2 + kind) * cells + j) * per_pos;
                out[dst..dst + per_pos].copy_from_slice(&x[src..src + per_pos]);
            }
        }
    }
    out
}

#[test]
fn bb_backbone_commutes_with_torus_shifts() {
    for variant in [ConvVariant::Standard, ConvVariant::Depthwise] {
        let mut m = model("bb144", 8, 2, variant);
        perturb(&mut m, 21, 0.2);
        let Layout::Torus(t) = &m.code.layout else { panic!() };
        let (l, mm) = (t.l, t.m);
        let (batch, rounds) = (2, 2);
        let x = input(&m, batch, rounds, 22);
        let xf: Vec<f64> = x.data.iter().map(|&v| f64::from(v)).collect();
        for mode in [Mode::Eval, Mode::Train] {
            let base = m.features(&x, mode).unwrap().data;
            let scale = max_abs(&base);
            for dx in 0..l {
                for dy in 0..mm {
                    let shifted: Vec<f32> = shift_torus(&xf, (l, mm), (dx, dy), 1, batch * rounds)
                        .into_iter()
                        .map(|v| v as f32)
                        .collect();
                    let xs = Tensor::from_vec(&x.shape, shifted);
                    let got = m.features(&xs, mode).unwrap().data;
                    let want = shift_torus(&base, (l, mm), (dx, dy), 8, batch * rounds);
                    assert!(max_abs_diff(&got, &want) <= 1e-5 * scale, "shift ({dx},{dy})");
                }
            }
        }
    }
}

#[test]
fn surface_perturbations_stay_local() {
    let layers = 2;
    let mut m = model("surface:7", 8, layers, ConvVariant::Standard);
    perturb(&mut m, 23, 0.2);
    let (rounds, side) = (7, 8);
    let x = input(&m, 1, rounds, 24);
    let base = m.features(&x, Mode::Eval).unwrap().data;
    let (t0, r0, c0) = (3usize, 4usize, 3usize);
    let mut flipped = x.clone();
    let at = (t0 * side + r0) * side + c0;
    flipped.data[at] = 1.0 - flipped.data[at];
    let got = m.features(&flipped, Mode::Eval).unwrap().data;
    let mut reached_edge = false;
    for t in 0..rounds {
        for r in 0..side {
            for c in 0..side {
                let pos = (t * side + r) * side + c;
                let diff = max_abs_diff(&got[pos * 8..(pos + 1) * 8], &base[pos * 8..(pos + 1) * 8]);
                let dist = t.abs_diff(t0).max(r.abs_diff(r0)).max(c.abs_diff(c0));
                if dist > layers {
                    assert_eq!(diff, 0.0, "({t},{r},{c})");
                } else if dist == layers && diff > 0.0 {
                    reached_edge = true;
                }
            }
        }
    }
    assert!(reached_edge);
}

#[test]
fn frozen_statistics_make_train_and_eval_agree() {
    let mut m = model("surface:3", 8, 2, ConvVariant::Standard);
    perturb(&mut m, 25, 0.2);
    let x = input(&m, 4, 2, 26);
    let (train, cache) = m.forward_train(&x, Basis::X).unwrap();
    for (bn, c) in m.batch_norms().into_iter().zip(cache.blocks.iter().flat_map(|b| [&b.bn1, &b.bn2, &b.bn3])) {
        let c = c.as_ref().unwrap();
        m.params[bn[2]].value.copy_from_slice(&c.mean);
        m.params[bn[3]].value.copy_from_slice(&c.var);
    }
    let eval = m.forward(&x, Basis::X, Mode::Eval).unwrap();
    assert!(max_abs_diff(&train.data, &eval.data) <= 1e-5);
}

#[test]
fn running_stats_follow_momentum() {
    let mut m = model("surface:3", 8, 1, ConvVariant::Standard);
    let h = random_vec(3 * 16 * 8, 27);
    let (_, cache) = batch_norm_train(&h, &[1.0; 8], &[0.0; 8], 1e-5);
    let x = input(&m, 3, 1, 28);
    let (_, full) = m.forward_train(&x, Basis::Z).unwrap();
    let bn1 = full.blocks[0].bn1.as_ref().unwrap();
    let rows = bn1.rows as f64;
    m.update_running_stats(&full);
    let idx = m.batch_norms()[0];
    for ch in 0..8 {
        let mean = m.params[idx[2]].value[ch];
        let var = m.params[idx[3]].value[ch];
        assert!((mean - 0.1 * bn1.mean[ch]).abs() < 1e-12);
        assert!((var - (0.9 + 0.1 * bn1.var[ch] * rows / (rows - 1.0))).abs() < 1e-12);
    }
    assert_eq!(cache.rows, 48);
}

#[test]
fn random_inputs_stay_finite() {
    let m = model("surface:3", 8, 2, ConvVariant::Standard).cast::<f32>();
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..2 * 2 * 16).map(|_| rng.random::<f32>()).collect();
        let x = Tensor::from_vec(&[2, 2, 4, 4], data);
        let labels = [rng.random_bool(0.5), rng.random_bool(0.5)];
        let (loss, grads, _) = m.loss_and_grad(&x, &labels, Basis::Z).unwrap();
        assert!(loss.is_finite() && grads.is_finite(), "seed {seed}");
    }
}

#[test]
fn duplicated_batch_gives_same_gradients() {
    let mut m = model("surface:3", 8, 2, ConvVariant::Standard);
    perturb(&mut m, 29, 0.2);
    let x = input(&m, 3, 2, 30);
    let labels = [true, false, true];
    let (l1, g1, _) = m.loss_and_grad(&x, &labels, Basis::X).unwrap();
    let mut data = x.data.clone();
    data.extend_from_slice(&x.data);
    let x2 = Tensor::from_vec(&[6, 2, 4, 4], data);
    let labels2 = [true, false, true, true, false, true];
    let (l2, g2, _) = m.loss_and_grad(&x2, &labels2, Basis::X).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.groups.iter().zip(&g2.groups) {
        assert!(max_abs_diff(a, b) < 1e-10);
    }
}

#[test]
fn gradients_match_finite_differences() {
    for (id, variant) in [
        ("surface:3", ConvVariant::Standard),
        ("surface:3", ConvVariant::Depthwise),
        ("bb72", ConvVariant::Standard),
        ("bb72", ConvVariant::Depthwise),
    ] {
        let mut m = model(id, 8, 2, variant);
        perturb(&mut m, 31, 0.1);
        let x = input(&m, 3, 2, 32);
        let k = m.geometry.logicals(Basis::Z).len();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let labels: Vec<bool> = (0..3 * k).map(|_| rng.random_bool(0.5)).collect();
        let report = check_gradients(&m, &x, &labels, Basis::Z, 1e-5, 1e-3, Some(48)).unwrap();
        for g in &report.groups {
            assert!(g.passed, "{id} {variant:?} {}: {}", g.name, g.relative_error);
        }
        assert!(report.groups.iter().any(|g| g.analytic_norm > 1e-3));
    }
}

#[test]
fn checkpoint_roundtrip() {
    let mut m = model("bb72", 8, 1, ConvVariant::Standard);
    perturb(&mut m, 34, 0.1);
    let m = m.cast::<f32>();
    let ck = Checkpoint {
        model: m.clone(),
        metadata: serde_json::json!({"step": 12}),
    };
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.model.params, m.params);
    assert_eq!(back.metadata["step"], 12);
    assert_eq!(back.to_bytes(), bytes);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(Checkpoint::from_bytes(&long).is_err());
}

#[test]
fn roles_follow_tensor_shape() {
    for (id, variant) in [("surface:3", ConvVariant::Standard), ("bb72", ConvVariant::Depthwise)] {
        let m = model(id, 8, 2, variant);
        for p in &m.params {
            let matrix_like = p.shape.len() >= 2 && p.shape.iter().all(|&d| d > 1);
            match p.role {
                Role::Buffer => assert!(p.name.contains("running_")),
                Role::Matrix => assert!(matrix_like, "{}", p.name),
                Role::Vector => assert!(!matrix_like || p.name == "embed", "{}", p.name),
            }
        }
    }
}
