use convdec::codes::CssCode;
use convdec::hardware::{fold_model, quantize_model, Fp8};
use convdec::nn::{ConvVariant, Mode, Model, ModelConfig};
use convdec::sim::{build_memory_circuit, sample, syndrome_to_tensor, Basis, NoiseModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small model with random batch-norm affine terms, running statistics and
/// biases, so folding has something to absorb.
fn random_model(code: &CssCode, variant: ConvVariant, seed: u64) -> Model<f32> {
    let mut config = ModelConfig::new(8, 2);
    config.variant = variant;
    config.init_seed = seed;
    let mut m = Model::new(config, code).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut m.params {
        for v in &mut p.value {
            if p.name.ends_with("gamma") {
                *v = rng.random_range(0.5..1.5);
            } else if p.name.ends_with("running_var") {
                *v = rng.random_range(0.3..2.0);
            } else if p.name.ends_with("beta") || p.name.ends_with("running_mean") || p.name.ends_with("bias") {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    m
}

fn relative<T: Into<f64> + Copy>(a: &[T], b: &[T]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(&x, &y)| (x.into() - y.into()).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|&y| y.into().powi(2)).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[test]
fn folding_preserves_eval_forward() {
    let cases = [("surface:3", ConvVariant::Standard), ("surface:3", ConvVariant::Depthwise), ("bb72", ConvVariant::Standard), ("bb72", ConvVariant::Depthwise)];
    let (mut worst, mut worst32): (f64, f64) = (0.0, 0.0);
    for (id, variant) in cases {
        let code = CssCode::preset(id).unwrap();
        let circuit = build_memory_circuit(&code, 2, Basis::Z, &NoiseModel::data_level(0.05)).unwrap();
        let x = syndrome_to_tensor(&sample(&circuit, 16, 3), &code).unwrap();
        for seed in 0..25 {
            let m32 = random_model(&code, variant, seed);
            let (f32_folded, _) = fold_model(&m32).unwrap();
            let a = m32.forward(&x, Basis::Z, Mode::Eval).unwrap();
            let b = f32_folded.forward(&x, Basis::Z, Mode::Eval).unwrap();
            worst32 = worst32.max(relative(&b.data, &a.data));
            // Folding is exact algebra; compare in double precision.
            let m = m32.cast::<f64>();
            let (folded, report) = fold_model(&m).unwrap();
            assert_eq!(report.folded.len(), 4);
            assert_eq!(report.affine.len(), 2);
            let a = m.forward(&x, Basis::Z, Mode::Eval).unwrap();
            let b = folded.forward(&x, Basis::Z, Mode::Eval).unwrap();
            let feat_a = m.features(&x, Mode::Eval).unwrap();
            let feat_b = folded.features(&x, Mode::Eval).unwrap();
            worst = worst.max(relative(&b.data, &a.data)).max(relative(&feat_b.data, &feat_a.data));
        }
    }
    eprintln!("folded vs unfolded: {worst:.2e} (f64), {worst32:.2e} (f32)");
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn quantized_weights_are_representable() {
    let code = CssCode::preset("surface:3").unwrap();
    let m = random_model(&code, ConvVariant::Standard, 1);
    let q = quantize_model(&fold_model(&m).unwrap().0);
    for (name, scale) in &q.scales {
        let p = q.model.param(name).unwrap();
        for &v in &p.value {
            let code = Fp8::from_f32(v / scale);
            assert!(((code.to_f32() * scale) - v).abs() <= 1e-6 * v.abs().max(1e-6), "{name}");
        }
    }
    assert!(q.model.param("block0.down.bias").unwrap().value == fold_model(&m).unwrap().0.param("block0.down.bias").unwrap().value);
}

proptest! {
    #[test]
    fn codec_encode_is_stable(x in -500.0f32..500.0) {
        let c = Fp8::from_f32(x);
        prop_assert_eq!(Fp8::from_f32(c.to_f32()).to_f32(), c.to_f32());
        prop_assert!(c.to_f32().abs() <= 448.0);
    }
}
