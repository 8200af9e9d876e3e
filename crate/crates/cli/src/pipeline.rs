//! The staged run: code → train → eval → analysis → hardware. Each stage is
//! keyed by the hash of its configuration and of the files it reads; a stage
//! whose key and outputs match the directory's previous manifest is skipped.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use convdec::analysis::{write_curve, ErrorRatePoint};
use convdec::codes::CssCode;
use convdec::nn::{load_checkpoint, save_checkpoint, Model};
use convdec::sim::{Basis, SyndromeBatch};
use convdec::train::{init_model, mix, train, TrainEvent};
use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::{
    basis_name, buffer_row, calibration, compress_and_compare, decode_with, lambda_from_curves, load_curve,
    mac_row, noise_at, post_selection, post_selection_csv, predict_model, reference_decoder, roofline_rows, run_census,
    sample_batch, waterfall, write_json, StrResult,
};
use crate::config::{sha256_hex, RunConfig};
use crate::manifest::{file_hash, ErrorRecord, Manifest, OutputRecord, StageRecord, ERROR_RECORD};
use crate::preds::Predictions;
use crate::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const CODE_FILE: &str = "code.json";
pub const METRICS_FILE: &str = "train/metrics.ndjson";
pub const MODEL_FILE: &str = "train/model.ckpt";
pub const RAW_MODEL_FILE: &str = "train/raw.ckpt";
pub const EVAL_SUMMARY: &str = "eval/summary.json";
pub const CALIBRATION_FILE: &str = "analysis/calibration.json";
pub const POST_SELECTION_FILE: &str = "analysis/post_selection.csv";
pub const WATERFALL_FILE: &str = "analysis/waterfall.json";
pub const CENSUS_FILE: &str = "analysis/census.json";
pub const LAMBDA_FILE: &str = "analysis/lambda.json";
pub const HARDWARE_FILE: &str = "hardware/costs.json";
pub const COMPRESSION_FILE: &str = "hardware/fp8_eval.json";
pub const FOLDED_FILE: &str = "hardware/folded.ckpt";
pub const QUANTIZED_FILE: &str = "hardware/fp8.ckpt";

/// Stream separating evaluation seeds from training seeds.
const EVAL_STREAM: u64 = 0x6576_616c;
const FP8_STREAM: u64 = 0x6670_3800;

pub fn batch_file(basis: Basis, i: usize) -> String {
    format!("eval/batch_{}_{i}.bin", basis_name(basis))
}

pub fn preds_file(basis: Basis, i: usize) -> String {
    format!("eval/preds_{}_{i}.bin", basis_name(basis))
}

pub fn curve_file(decoder: &str, basis: Basis) -> String {
    format!("eval/curve_{decoder}_{}.csv", basis_name(basis))
}

/// One row of the evaluation summary.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct EvalRow {
    pub decoder: String,
    pub basis: Basis,
    pub p: f64,
    pub shots: usize,
    pub failures: usize,
    pub block_error_rate: f64,
    pub p_l: f64,
}

struct Run<'a> {
    dir: &'a Path,
    config: &'a RunConfig,
    hash: String,
    previous: Option<Manifest>,
    manifest: Manifest,
    log: bool,
}

impl Run<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn stage<F>(&mut self, name: &'static str, key: Value, body: F) -> Result<()>
    where
        F: FnOnce(&Self) -> StrResult<Vec<String>>,
    {
        let key = sha256_hex(format!("{name}\n{key}").as_bytes());
        if let Some(prev) = &self.previous {
            if prev.is_current(self.dir, name, &key) {
                let rec = prev.stage(name).expect("current stage exists").clone();
                for p in &rec.outputs {
                    self.manifest.outputs.push(prev.output(p).expect("current output exists").clone());
                }
                self.manifest.stages.push(rec);
                if self.log {
                    eprintln!("[{name}] unchanged, skipped");
                }
                return Ok(());
            }
        }
        if self.log {
            eprintln!("[{name}] running");
        }
        let outputs = match body(self) {
            Ok(o) => o,
            Err(message) => {
                let record = ErrorRecord {
                    stage: name.into(),
                    message: message.clone(),
                    config_hash: self.hash.clone(),
                    seed: self.config.seed,
                };
                let _ = write_json(&self.path(ERROR_RECORD), &record);
                let _ = self.manifest.save(self.dir);
                return Err(CliError::stage(name, message));
            }
        };
        for p in &outputs {
            let sha256 = file_hash(&self.path(p)).ok_or_else(|| CliError::stage(name, format!("output {p} missing")))?;
            self.manifest.outputs.push(OutputRecord {
                path: p.clone(),
                sha256,
                stage: name.into(),
                config_hash: self.hash.clone(),
                seed: self.config.seed,
            });
        }
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            key,
            outputs,
        });
        Ok(())
    }

    fn key_of(&self, stage: &str) -> String {
        self.manifest.stage(stage).map(|s| s.key.clone()).unwrap_or_default()
    }

    fn code(&self) -> StrResult<CssCode> {
        CssCode::load(self.path(CODE_FILE)).map_err(|e| e.to_string())
    }

    /// Model evaluated downstream: the trained average, else the configured checkpoint.
    fn model_source(&self) -> Option<PathBuf> {
        if self.config.train.is_some() {
            return Some(self.path(MODEL_FILE));
        }
        self.config.eval.as_ref().and_then(|e| e.checkpoint.clone())
    }

    fn load_model(&self) -> StrResult<Option<Model<f32>>> {
        let Some(p) = self.model_source() else {
            return Ok(None);
        };
        let ck = load_checkpoint(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        Ok(Some(ck.model))
    }

    fn model_hash(&self) -> String {
        self.model_source().and_then(|p| file_hash(&p)).unwrap_or_default()
    }

    fn ensure_dir(&self, rel: &str) -> StrResult<()> {
        std::fs::create_dir_all(self.path(rel)).map_err(|e| e.to_string())
    }

    fn metadata(&self, extra: Value) -> Value {
        let mut m = json!({ "config_hash": self.hash, "seed": self.config.seed });
        if let (Value::Object(m), Value::Object(e)) = (&mut m, extra) {
            m.extend(e);
        }
        m
    }

    /// Evaluation batches in stage order.
    fn eval_batches(&self) -> StrResult<Vec<(Basis, usize, f64, SyndromeBatch)>> {
        let Some(e) = &self.config.eval else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for &basis in &e.bases {
            for (i, &p) in e.p_values.iter().enumerate() {
                let b = SyndromeBatch::load(self.path(&batch_file(basis, i))).map_err(|e| e.to_string())?;
                out.push((basis, i, p, b));
            }
        }
        Ok(out)
    }
}

/// Runs every stage whose section is present and writes `manifest.json`.
pub fn run_pipeline(config: &RunConfig, dir: &Path, log: bool) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::stage("setup", e))?;
    let _ = std::fs::remove_file(dir.join(ERROR_RECORD));
    let hash = config.hash();
    let mut run = Run {
        dir,
        config,
        hash: hash.clone(),
        previous: Manifest::load(dir),
        manifest: Manifest {
            config_hash: hash,
            seed: config.seed,
            ..Manifest::default()
        },
        log,
    };
    run.stage("config", json!(config), |r| {
        write_json(&r.path(CONFIG_FILE), r.config)?;
        Ok(vec![CONFIG_FILE.into()])
    })?;
    if let Some(section) = &config.code {
        let file = section.file.as_ref().and_then(|f| file_hash(f));
        run.stage("code", json!({ "code": section, "file": file }), |r| {
            let code = section.load().map_err(|e| e.to_string())?;
            code.save(r.path(CODE_FILE)).map_err(|e| e.to_string())?;
            Ok(vec![CODE_FILE.into()])
        })?;
    }
    if let (Some(model), Some(tc)) = (&config.model, &config.train) {
        let key = json!({ "code": run.key_of("code"), "model": model, "train": tc });
        run.stage("train", key, |r| train_stage(r, model, tc))?;
    }
    if let Some(e) = &config.eval {
        let key = json!({
            "code": run.key_of("code"), "eval": e, "noise": config.noise, "seed": config.seed,
            "model": run.model_hash(),
        });
        run.stage("eval", key, eval_stage)?;
    }
    if let Some(a) = &config.analysis {
        let key = json!({ "code": run.key_of("code"), "eval": run.key_of("eval"), "analysis": a,
            "lambda_inputs": a.lambda.as_ref().map(|l| l.curves.iter().map(|c| file_hash(&c.path)).collect::<Vec<_>>()) });
        run.stage("analysis", key, analysis_stage)?;
    }
    if let Some(h) = &config.hardware {
        let key = json!({ "hardware": h, "eval": run.key_of("eval"), "model": run.model_hash(), "seed": config.seed });
        run.stage("hardware", key, hardware_stage)?;
    }
    run.manifest.save(dir).map_err(|e| CliError::stage("manifest", e))?;
    Ok(run.manifest)
}

fn train_stage(r: &Run<'_>, model: &convdec::nn::ModelConfig, tc: &convdec::train::TrainConfig) -> StrResult<Vec<String>> {
    let code = r.code()?;
    r.ensure_dir("train")?;
    let init = init_model(model.clone(), &code).map_err(|e| e.to_string())?;
    let mut log = BufWriter::new(File::create(r.path(METRICS_FILE)).map_err(|e| e.to_string())?);
    let mut outputs = vec![METRICS_FILE.to_string()];
    let mut failure: Option<String> = None;
    let outcome = train(init, tc, |event| match event {
        TrainEvent::Step(m) => {
            let line = serde_json::to_string(m).expect("metrics serialize");
            if let Err(e) = writeln!(log, "{line}") {
                failure.get_or_insert(e.to_string());
            }
        }
        TrainEvent::Checkpoint { step, ema, .. } => {
            let rel = format!("train/step_{step:08}.ckpt");
            match save_checkpoint(r.path(&rel), ema, r.metadata(json!({ "step": step, "weights": "ema" }))) {
                Ok(()) => outputs.push(rel),
                Err(e) => {
                    failure.get_or_insert(e.to_string());
                }
            }
        }
    })
    .map_err(|e| e.to_string())?;
    log.flush().map_err(|e| e.to_string())?;
    if let Some(e) = failure {
        return Err(e);
    }
    let meta = |w: &str| r.metadata(json!({ "step": tc.steps, "weights": w }));
    save_checkpoint(r.path(MODEL_FILE), &outcome.ema, meta("ema")).map_err(|e| e.to_string())?;
    save_checkpoint(r.path(RAW_MODEL_FILE), &outcome.model, meta("raw")).map_err(|e| e.to_string())?;
    outputs.push(MODEL_FILE.into());
    outputs.push(RAW_MODEL_FILE.into());
    Ok(outputs)
}

fn eval_stage(r: &Run<'_>) -> StrResult<Vec<String>> {
    let e = r.config.eval.as_ref().expect("eval section");
    let noise = r.config.noise.as_ref().expect("validated");
    let code = r.code()?;
    let model = r.load_model()?;
    if let Some(m) = &model {
        if m.code != code {
            return Err("the evaluated model was built for a different code".into());
        }
    }
    r.ensure_dir("eval")?;
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for (bi, &basis) in e.bases.iter().enumerate() {
        let mut curves: Vec<(String, Vec<ErrorRatePoint>)> = Vec::new();
        let mut push = |name: &str, p: f64, failures: usize, shots: usize, k: usize| {
            let point = ErrorRatePoint::with_level(p, failures as u64, shots as u64, k, e.rounds, e.credible_level);
            rows.push(EvalRow {
                decoder: name.into(),
                basis,
                p,
                shots,
                failures,
                block_error_rate: point.p_block,
                p_l: point.p_l,
            });
            match curves.iter_mut().find(|(n, _)| n == name) {
                Some((_, c)) => c.push(point),
                None => curves.push((name.into(), vec![point])),
            }
        };
        for (i, &p) in e.p_values.iter().enumerate() {
            let seed = mix(r.config.seed ^ EVAL_STREAM, (bi * e.p_values.len() + i) as u64);
            let batch = sample_batch(&code, e.rounds, basis, &noise_at(noise, p), e.shots, seed)?;
            let rel = batch_file(basis, i);
            batch.save(r.path(&rel)).map_err(|e| e.to_string())?;
            outputs.push(rel);
            let labels = crate::commands::batch_labels(&batch);
            let k = batch.observables;
            if let Some(m) = &model {
                let preds = predict_model(m, &batch, basis, e.chunk)?;
                let rel = preds_file(basis, i);
                preds.save(&r.path(&rel))?;
                outputs.push(rel);
                push("model", p, preds.failures(&labels), batch.shots, k);
            }
            for &kind in &e.decoders {
                let dec = reference_decoder(kind, &code, basis, p, e.lookup_cutoff, e.bp_iterations)?;
                let preds = decode_with(dec.as_ref(), &batch)?;
                push(kind.name(), p, preds.failures(&labels), batch.shots, k);
            }
        }
        for (name, points) in curves {
            let rel = curve_file(&name, basis);
            let f = File::create(r.path(&rel)).map_err(|e| e.to_string())?;
            write_curve(&points, f).map_err(|e| e.to_string())?;
            outputs.push(rel);
        }
    }
    write_json(&r.path(EVAL_SUMMARY), &rows)?;
    outputs.push(EVAL_SUMMARY.into());
    Ok(outputs)
}

fn analysis_stage(r: &Run<'_>) -> StrResult<Vec<String>> {
    let a = r.config.analysis.as_ref().expect("analysis section");
    r.ensure_dir("analysis")?;
    let mut outputs = Vec::new();
    if let Some(e) = &r.config.eval {
        let batches = r.eval_batches()?;
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for (basis, i, p, batch) in &batches {
            let path = r.path(&preds_file(*basis, *i));
            if !path.exists() {
                continue;
            }
            let preds = Predictions::load(&path)?;
            let l = crate::commands::batch_labels(batch);
            let label = format!("{}:{p}", basis_name(*basis));
            rows.extend(post_selection(&label, &preds, &l, &a.post_select_thresholds, e.rounds)?);
            probs.extend(preds.probabilities.iter().flatten().map(|&v| f64::from(v)));
            labels.extend(l);
        }
        if !probs.is_empty() {
            write_json(&r.path(CALIBRATION_FILE), &calibration(&probs, &labels, a.calibration_bins)?)?;
            std::fs::write(r.path(POST_SELECTION_FILE), post_selection_csv(&rows)).map_err(|e| e.to_string())?;
            outputs.push(CALIBRATION_FILE.into());
            outputs.push(POST_SELECTION_FILE.into());
        }
        let mut fits = Vec::new();
        for &basis in &e.bases {
            let mut names: Vec<&str> = e.decoders.iter().map(|d| d.name()).collect();
            names.insert(0, "model");
            for name in names {
                let rel = curve_file(name, basis);
                if !r.path(&rel).exists() {
                    continue;
                }
                let curve = load_curve(&r.path(&rel))?;
                if curve.iter().filter(|p| p.failures > 0).count() >= a.waterfall_min_points {
                    fits.push(json!({ "curve": rel, "fit": waterfall(&curve) }));
                }
            }
        }
        if !fits.is_empty() {
            write_json(&r.path(WATERFALL_FILE), &fits)?;
            outputs.push(WATERFALL_FILE.into());
        }
    }
    if let Some(c) = &a.census {
        let code = r.code()?;
        let report = run_census(&code, c.decoder, c.basis, c.wmax, c.p, c.budget, c.lookup_cutoff)?;
        write_json(&r.path(CENSUS_FILE), &report)?;
        outputs.push(CENSUS_FILE.into());
    }
    if let Some(l) = &a.lambda {
        let curves = l
            .curves
            .iter()
            .map(|c| Ok((c.d, load_curve(&c.path)?)))
            .collect::<StrResult<Vec<_>>>()?;
        write_json(&r.path(LAMBDA_FILE), &lambda_from_curves(&curves, l.p)?)?;
        outputs.push(LAMBDA_FILE.into());
    }
    Ok(outputs)
}

fn hardware_stage(r: &Run<'_>) -> StrResult<Vec<String>> {
    let h = r.config.hardware.as_ref().expect("hardware section");
    r.ensure_dir("hardware")?;
    let macs = h.macs.iter().map(mac_row).collect::<StrResult<Vec<_>>>()?;
    let buffers = h
        .buffers
        .iter()
        .map(|b| buffer_row(&b.spec, b.bytes_per_value))
        .collect::<StrResult<Vec<_>>>()?;
    let roofline = match &h.roofline {
        Some(rf) => roofline_rows(&rf.presets, &rf.codes, rf.hidden, rf.bottleneck, rf.variant, rf.layers)?,
        None => Vec::new(),
    };
    write_json(
        &r.path(HARDWARE_FILE),
        &json!({ "macs": macs, "buffers": buffers, "roofline": roofline }),
    )?;
    let mut outputs = vec![HARDWARE_FILE.to_string()];
    if h.fold_quantize {
        let model = r.load_model()?.ok_or("no model to compress")?;
        let e = r.config.eval.as_ref().expect("validated");
        let noise = r.config.noise.as_ref().expect("validated");
        let p = e.p_values.iter().copied().fold(f64::MIN, f64::max);
        let batches = e
            .bases
            .iter()
            .enumerate()
            .map(|(i, &basis)| {
                let seed = mix(r.config.seed ^ FP8_STREAM, i as u64);
                Ok((basis, p, sample_batch(&model.code, e.rounds, basis, &noise_at(noise, p), h.fp8_shots, seed)?))
            })
            .collect::<StrResult<Vec<_>>>()?;
        let (folded, quantized, report) = compress_and_compare(&model, &batches, e.chunk)?;
        save_checkpoint(r.path(FOLDED_FILE), &folded, r.metadata(json!({ "weights": "folded" })))
            .map_err(|e| e.to_string())?;
        save_checkpoint(r.path(QUANTIZED_FILE), &quantized.model, r.metadata(json!({ "weights": "fp8", "scales": quantized.scales })))
            .map_err(|e| e.to_string())?;
        write_json(&r.path(COMPRESSION_FILE), &report)?;
        outputs.extend([FOLDED_FILE.to_string(), QUANTIZED_FILE.to_string(), COMPRESSION_FILE.to_string()]);
    }
    Ok(outputs)
}
