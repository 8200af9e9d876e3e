//! Building blocks shared by the subcommands and the pipeline stages.

use std::path::Path;

use convdec::analysis::{
    enumerate_minimal_failure_modes, fit_lambda, fit_suppression_exponent, fit_two_powerlaw, post_select,
    per_cycle_discard, predicted_pl, read_curve, reliability, CalibrationReport, ErrorRatePoint, FailureModeCensus,
    FitResult, LambdaPoint, PowerPoint,
};
use convdec::codes::{CssCode, Layout};
use convdec::decoders::{
    marginal_flip, shot_syndrome, DecodeResult, DecoderError, BpDecoder, Decoder, ExactMl, LookupDecoder, MAX_MEMORY_QUBITS,
};
use convdec::hardware::{
    buffer_sizing, fold_model, mac_count, quantize_model, roofline_latency, BlockCostSpec, BlockVariant, BufferReport,
    FoldReport, MacBreakdown, QuantizedModel, RooflineSpec, RoundConvention,
};
use convdec::nn::{Mode, Model};
use convdec::sim::{build_memory_circuit, sample, Basis, NoiseModel, SyndromeBatch};
use serde::{Deserialize, Serialize};

use crate::config::DecoderKind;
use crate::preds::Predictions;

pub type StrResult<T> = Result<T, String>;

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> StrResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(s)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn basis_name(b: Basis) -> &'static str {
    match b {
        Basis::X => "x",
        Basis::Z => "z",
    }
}

/// `noise` with its physical rate moved to `p`; measurement noise scales along.
pub fn noise_at(noise: &NoiseModel, p: f64) -> NoiseModel {
    let q = if noise.p > 0.0 { (noise.q * p / noise.p).min(1.0) } else { noise.q };
    NoiseModel { p, q, ..*noise }
}

pub fn sample_batch(
    code: &CssCode,
    rounds: usize,
    basis: Basis,
    noise: &NoiseModel,
    shots: usize,
    seed: u64,
) -> StrResult<SyndromeBatch> {
    let circuit = build_memory_circuit(code, rounds, basis, noise).map_err(s)?;
    Ok(sample(&circuit, shots, seed))
}

/// Reference decoder for a `basis` memory at physical rate `p`; the prior is
/// the marginal flip probability of data-level depolarizing noise.
pub fn reference_decoder(
    kind: DecoderKind,
    code: &CssCode,
    basis: Basis,
    p: f64,
    cutoff: usize,
    iterations: usize,
) -> StrResult<Box<dyn Decoder>> {
    let q = marginal_flip(p);
    Ok(match kind {
        DecoderKind::Ml => Box::new(ExactMl::memory(code, basis, q).map_err(s)?),
        DecoderKind::Lookup => Box::new(LookupDecoder::new(code, basis, cutoff)),
        DecoderKind::Bp => Box::new(BpDecoder::new(code, basis, q).map_err(s)?.with_iterations(iterations)),
    })
}

/// Decodes every shot. Syndromes a lookup table does not cover decode to no
/// correction.
pub fn decode_with(decoder: &dyn Decoder, batch: &SyndromeBatch) -> StrResult<Predictions> {
    use rayon::prelude::*;
    if decoder.checks().iter().any(|&c| c >= batch.checks_per_round) {
        return Err("batch does not match the decoder's code".into());
    }
    let results: Vec<DecodeResult> = (0..batch.shots)
        .into_par_iter()
        .map(|i| match decoder.decode(&shot_syndrome(batch, i, decoder.checks())) {
            Err(DecoderError::UnknownSyndrome) => Ok(DecodeResult {
                flips: vec![false; batch.observables],
                confidence: None,
                converged: None,
                iterations: 0,
            }),
            r => r,
        })
        .collect::<Result<_, _>>()
        .map_err(s)?;
    Ok(Predictions::from_results(&results, batch.observables))
}

pub fn batch_labels(batch: &SyndromeBatch) -> Vec<bool> {
    (0..batch.shots).flat_map(|i| batch.shot_labels(i)).collect()
}

/// Network predictions, optionally through the FP8 simulation.
pub fn predict_model(model: &Model<f32>, batch: &SyndromeBatch, basis: Basis, chunk: usize) -> StrResult<Predictions> {
    let e = convdec::train::predict(model, batch, basis, chunk).map_err(s)?;
    Ok(Predictions::from_evaluation(&e))
}

pub fn predict_quantized(q: &QuantizedModel, batch: &SyndromeBatch, basis: Basis, chunk: usize) -> StrResult<Predictions> {
    let e = convdec::train::predict_with(&q.model.code, batch, chunk, |x| q.forward(x, basis)).map_err(s)?;
    Ok(Predictions::from_evaluation(&e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodeSummary {
    pub name: String,
    pub n: usize,
    pub k: usize,
    pub d: Option<usize>,
    pub x_checks: usize,
    pub z_checks: usize,
    pub layout: String,
}

pub fn code_summary(code: &CssCode) -> CodeSummary {
    let layout = match &code.layout {
        Layout::Grid(g) => format!("grid {0}x{0} data, {1}x{1} checks", g.d, g.side()),
        Layout::Torus(t) => format!("torus {}x{}", t.l, t.m),
    };
    CodeSummary {
        name: code.name.clone(),
        n: code.n,
        k: code.k,
        d: code.d,
        x_checks: code.num_x_checks(),
        z_checks: code.num_z_checks(),
        layout,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacRow {
    pub spec: BlockCostSpec,
    pub macs: MacBreakdown,
    pub spatial_fraction: f64,
    /// Per-block MACs relative to the standard convolution at the same size.
    pub relative_to_conv: f64,
}

pub fn mac_row(spec: &BlockCostSpec) -> StrResult<MacRow> {
    let macs = mac_count(spec).map_err(s)?;
    let conv = mac_count(&BlockCostSpec {
        variant: BlockVariant::Conv,
        ..*spec
    })
    .map_err(s)?;
    Ok(MacRow {
        spec: *spec,
        macs,
        spatial_fraction: macs.spatial_fraction(),
        relative_to_conv: macs.per_block as f64 / conv.per_block as f64,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BufferRow {
    pub spec: BlockCostSpec,
    pub bytes_per_value: u64,
    pub report: BufferReport,
}

pub fn buffer_row(spec: &BlockCostSpec, bytes_per_value: u64) -> StrResult<BufferRow> {
    Ok(BufferRow {
        spec: *spec,
        bytes_per_value,
        report: buffer_sizing(spec, bytes_per_value).map_err(s)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RooflineRow {
    pub device: String,
    pub throughput: f64,
    pub code: String,
    pub convention: RoundConvention,
    pub n: u64,
    pub kernel: u64,
    pub layers: u64,
    pub macs_per_network: u64,
    pub latency_us: f64,
    /// Latency relative to the first device at the same code and convention.
    pub slowdown: f64,
}

/// Latency of one network evaluation for every device, code and both round
/// conventions. `layers = None` uses the code distance.
pub fn roofline_rows(
    presets: &[String],
    codes: &[String],
    hidden: u64,
    bottleneck: u64,
    variant: BlockVariant,
    layers: Option<u64>,
) -> StrResult<Vec<RooflineRow>> {
    let devices: Vec<RooflineSpec> = presets.iter().map(|p| RooflineSpec::preset(p).map_err(s)).collect::<StrResult<_>>()?;
    let mut rows = Vec::new();
    for id in codes {
        let code = CssCode::preset(id).map_err(s)?;
        let layers = layers.or(code.d.map(|d| d as u64)).ok_or("code has no distance; give layers")?;
        for convention in [RoundConvention::PerRound, RoundConvention::FullVolume] {
            let spec = BlockCostSpec {
                n: convention.positions(&code),
                hidden,
                bottleneck,
                kernel: RoundConvention::kernel(&code),
                layers,
                variant,
            };
            let mut base = None;
            for dev in &devices {
                let latency = roofline_latency(&spec, dev).map_err(s)?;
                let base = *base.get_or_insert(latency);
                rows.push(RooflineRow {
                    device: dev.name.clone(),
                    throughput: dev.throughput,
                    code: id.clone(),
                    convention,
                    n: spec.n,
                    kernel: spec.kernel,
                    layers,
                    macs_per_network: mac_count(&spec).map_err(s)?.per_network,
                    latency_us: latency * 1e6,
                    slowdown: latency / base,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusReport {
    pub census: FailureModeCensus,
    pub p: f64,
    /// Per-location flip probability used for the prior and the prediction.
    pub q: f64,
    pub predicted: f64,
}

pub fn run_census(
    code: &CssCode,
    kind: DecoderKind,
    basis: Basis,
    wmax: usize,
    p: f64,
    budget: u64,
    cutoff: usize,
) -> StrResult<CensusReport> {
    let decoder = reference_decoder(kind, code, basis, p, cutoff, convdec::decoders::DEFAULT_ITERATIONS)?;
    let census = enumerate_minimal_failure_modes(code, basis, decoder.as_ref(), kind.name(), wmax, budget).map_err(s)?;
    let q = marginal_flip(p);
    Ok(CensusReport {
        predicted: predicted_pl(&census, q),
        census,
        p,
        q,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaterfallReport {
    pub points: usize,
    pub two_power: Option<FitResult>,
    pub single_power: Option<FitResult>,
    pub error: Option<String>,
}

/// Two-power-law and single-power fits of a curve's nonzero points.
pub fn waterfall(points: &[ErrorRatePoint]) -> WaterfallReport {
    let pts: Vec<PowerPoint> = points.iter().filter(|p| p.failures > 0).map(PowerPoint::from).collect();
    let two = fit_two_powerlaw(&pts);
    let one = fit_suppression_exponent(&pts);
    let error = two.as_ref().err().or(one.as_ref().err()).map(s);
    WaterfallReport {
        points: pts.len(),
        two_power: two.ok(),
        single_power: one.ok(),
        error,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaReport {
    pub p: f64,
    pub points: Vec<LambdaPoint>,
    pub fit: FitResult,
}

/// Λ fit across distances, each curve contributing its point nearest to `p`.
pub fn lambda_from_curves(curves: &[(usize, Vec<ErrorRatePoint>)], p: f64) -> StrResult<LambdaReport> {
    let mut points = Vec::new();
    for (d, curve) in curves {
        let best = curve
            .iter()
            .min_by(|a, b| (a.p - p).abs().total_cmp(&(b.p - p).abs()))
            .ok_or_else(|| format!("curve for d = {d} is empty"))?;
        points.push(LambdaPoint::from_rate(*d, best));
    }
    let fit = fit_lambda(&points).map_err(s)?.with_threshold(p);
    Ok(LambdaReport { p, points, fit })
}

pub fn load_curve(path: &Path) -> StrResult<Vec<ErrorRatePoint>> {
    let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    read_curve(f).map_err(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostSelectionRow {
    pub label: String,
    pub threshold: f64,
    pub accepted: u64,
    pub acceptance: f64,
    pub error_rate: f64,
    pub per_cycle_discard: f64,
}

pub fn calibration(preds: &[f64], labels: &[bool], bins: usize) -> StrResult<CalibrationReport> {
    reliability(preds, labels, bins).map_err(s)
}

pub fn post_selection(
    label: &str,
    preds: &Predictions,
    labels: &[bool],
    thresholds: &[f64],
    rounds: usize,
) -> StrResult<Vec<PostSelectionRow>> {
    let probs = preds.probabilities.as_ref().ok_or("predictions carry no probabilities")?;
    let probs: Vec<f64> = probs.iter().map(|&v| f64::from(v)).collect();
    let points = post_select(&probs, labels, preds.observables, thresholds).map_err(s)?;
    Ok(points
        .into_iter()
        .map(|p| PostSelectionRow {
            label: label.to_string(),
            threshold: p.threshold,
            accepted: p.accepted,
            acceptance: p.acceptance,
            error_rate: p.error_rate,
            per_cycle_discard: per_cycle_discard(p.acceptance, rounds),
        })
        .collect())
}

pub fn post_selection_csv(rows: &[PostSelectionRow]) -> String {
    let mut out = String::from("label,threshold,accepted,acceptance,error_rate,per_cycle_discard\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label, r.threshold, r.accepted, r.acceptance, r.error_rate, r.per_cycle_discard
        ));
    }
    out
}

/// Largest relative deviation between two logit vectors.
pub fn relative_deviation(a: &[f32], b: &[f32]) -> f64 {
    let scale = a.iter().map(|v| f64::from(v.abs())).fold(1e-30, f64::max);
    a.iter().zip(b).map(|(x, y)| f64::from((x - y).abs())).fold(0.0, f64::max) / scale
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fp8Comparison {
    pub basis: Basis,
    pub p: f64,
    pub shots: usize,
    pub failures_f32: usize,
    pub failures_fp8: usize,
    pub rate_f32: f64,
    pub rate_fp8: f64,
    /// Binomial standard deviation of the 32-bit rate.
    pub sigma: f64,
    pub within_two_sigma: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionReport {
    pub fold: FoldReport,
    /// Eval-mode logit deviation of the folded model on the first batch.
    pub fold_deviation: f64,
    pub quantized_tensors: usize,
    pub comparisons: Vec<Fp8Comparison>,
}

/// Folds and quantizes `model`; both networks then decode the same batches.
pub fn compress_and_compare(
    model: &Model<f32>,
    batches: &[(Basis, f64, SyndromeBatch)],
    chunk: usize,
) -> StrResult<(Model<f32>, QuantizedModel, CompressionReport)> {
    let (folded, fold) = fold_model(model).map_err(s)?;
    let quantized = quantize_model(&folded);
    let mut fold_deviation = 0.0;
    let mut comparisons = Vec::new();
    for (i, (basis, p, batch)) in batches.iter().enumerate() {
        if i == 0 {
            let part = batch.slice(0, batch.shots.min(chunk));
            let (x, _) = convdec::train::batch_inputs(&part, &model.code).map_err(s)?;
            let a = model.forward(&x, *basis, Mode::Eval).map_err(s)?;
            let b = folded.forward(&x, *basis, Mode::Eval).map_err(s)?;
            fold_deviation = relative_deviation(&a.data, &b.data);
        }
        let labels = batch_labels(batch);
        let full = predict_model(model, batch, *basis, chunk)?.failures(&labels);
        let low = predict_quantized(&quantized, batch, *basis, chunk)?.failures(&labels);
        let n = batch.shots as f64;
        let rate_f32 = full as f64 / n;
        let rate_fp8 = low as f64 / n;
        let sigma = (rate_f32 * (1.0 - rate_f32) / n).sqrt();
        comparisons.push(Fp8Comparison {
            basis: *basis,
            p: *p,
            shots: batch.shots,
            failures_f32: full,
            failures_fp8: low,
            rate_f32,
            rate_fp8,
            sigma,
            within_two_sigma: (rate_fp8 - rate_f32).abs() <= 2.0 * sigma,
        });
    }
    let report = CompressionReport {
        fold,
        fold_deviation,
        quantized_tensors: quantized.scales.len(),
        comparisons,
    };
    Ok((folded, quantized, report))
}

/// Whether exhaustive ML decoding is feasible for `code`.
pub fn ml_feasible(code: &CssCode) -> bool {
    code.n <= MAX_MEMORY_QUBITS
}
