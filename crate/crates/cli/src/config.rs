//! Run configuration. Unknown keys are rejected everywhere; the resolved
//! document (with every default spelled out) is written next to the outputs.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use convdec::codes::CssCode;
use convdec::decoders::DEFAULT_ITERATIONS;
use convdec::hardware::BlockCostSpec;
use convdec::nn::{ConvVariant, ModelConfig};
use convdec::sim::{Basis, NoiseModel};
use convdec::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Ml,
    Lookup,
    Bp,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ml => "ml",
            Self::Lookup => "lookup",
            Self::Bp => "bp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSection {
    /// Preset id such as `surface:3` or `bb144`.
    #[serde(default)]
    pub preset: Option<String>,
    /// Code document written by `code build`.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

impl CodeSection {
    pub fn load(&self) -> Result<CssCode> {
        match (&self.preset, &self.file) {
            (Some(p), None) => CssCode::preset(p).map_err(CliError::config),
            (None, Some(f)) => CssCode::load(f).map_err(CliError::config),
            _ => Err(CliError::Config("code needs exactly one of `preset` and `file`".into())),
        }
    }
}

fn default_chunk() -> usize {
    4096
}

fn default_cutoff() -> usize {
    3
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_level() -> f64 {
    0.95
}

fn default_bases() -> Vec<Basis> {
    vec![Basis::Z, Basis::X]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub rounds: usize,
    pub shots: usize,
    /// Physical rates of the curve; the noise kind comes from `noise`.
    pub p_values: Vec<f64>,
    #[serde(default = "default_bases")]
    pub bases: Vec<Basis>,
    /// Model to evaluate when no training stage runs.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Reference decoders run on the same batches.
    #[serde(default)]
    pub decoders: Vec<DecoderKind>,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    #[serde(default = "default_cutoff")]
    pub lookup_cutoff: usize,
    #[serde(default = "default_iterations")]
    pub bp_iterations: usize,
    #[serde(default = "default_level")]
    pub credible_level: f64,
}

fn default_bins() -> usize {
    convdec::analysis::DEFAULT_BINS
}

fn default_thresholds() -> Vec<f64> {
    vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99]
}

fn default_min_points() -> usize {
    4
}

fn default_budget() -> u64 {
    convdec::analysis::DEFAULT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensusSection {
    pub decoder: DecoderKind,
    pub basis: Basis,
    pub wmax: usize,
    /// Physical rate at which the prediction is evaluated and the decoder prior set.
    pub p: f64,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_cutoff")]
    pub lookup_cutoff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaCurve {
    pub d: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    pub curves: Vec<LambdaCurve>,
    /// Physical rate at which the curves are compared (nearest point used).
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_bins")]
    pub calibration_bins: usize,
    #[serde(default = "default_thresholds")]
    pub post_select_thresholds: Vec<f64>,
    /// Smallest curve length given to the waterfall fit.
    #[serde(default = "default_min_points")]
    pub waterfall_min_points: usize,
    #[serde(default)]
    pub census: Option<CensusSection>,
    #[serde(default)]
    pub lambda: Option<LambdaSection>,
}

fn default_bytes() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferSection {
    pub spec: BlockCostSpec,
    #[serde(default = "default_bytes")]
    pub bytes_per_value: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RooflineSection {
    pub presets: Vec<String>,
    pub codes: Vec<String>,
    pub hidden: u64,
    pub bottleneck: u64,
    pub variant: convdec::hardware::BlockVariant,
    /// Network depth; `null` uses the code distance.
    #[serde(default)]
    pub layers: Option<u64>,
}

fn default_fp8_shots() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSection {
    #[serde(default)]
    pub macs: Vec<BlockCostSpec>,
    #[serde(default)]
    pub buffers: Vec<BufferSection>,
    #[serde(default)]
    pub roofline: Option<RooflineSection>,
    /// Fold batch norms and quantize the trained (or checkpointed) model.
    #[serde(default)]
    pub fold_quantize: bool,
    #[serde(default = "default_fp8_shots")]
    pub fp8_shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub code: Option<CodeSection>,
    /// Noise of the evaluation batches; `p` is replaced by each curve point.
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
    #[serde(default)]
    pub analysis: Option<AnalysisSection>,
    #[serde(default)]
    pub hardware: Option<HardwareSection>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(CliError::config)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical serialization; the hash of these bytes identifies the run.
    pub fn canonical(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.canonical())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if (self.train.is_some() || self.eval.is_some()) && self.code.is_none() {
            return bad("train and eval need a code section");
        }
        if self.train.is_some() && self.model.is_none() {
            return bad("train needs a model section");
        }
        if let Some(m) = &self.model {
            m.validate().map_err(CliError::config)?;
        }
        if let Some(t) = &self.train {
            t.validate().map_err(CliError::config)?;
        }
        if let Some(e) = &self.eval {
            let Some(noise) = &self.noise else {
                return bad("eval needs a noise section");
            };
            noise.validate().map_err(CliError::config)?;
            if e.rounds == 0 || e.shots == 0 || e.chunk == 0 {
                return bad("eval rounds, shots and chunk must be positive");
            }
            if e.p_values.is_empty() || e.p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad("eval p_values must be nonempty probabilities");
            }
            if e.bases.is_empty() {
                return bad("eval needs at least one basis");
            }
            if !(e.credible_level > 0.0 && e.credible_level < 1.0) {
                return bad("credible_level must lie in (0, 1)");
            }
        }
        if let Some(a) = &self.analysis {
            if a.calibration_bins == 0 {
                return bad("calibration_bins must be positive");
            }
            if a.census.is_some() && self.code.is_none() {
                return bad("census needs a code section");
            }
        }
        if let Some(h) = &self.hardware {
            if h.fold_quantize && self.train.is_none() && self.eval.as_ref().and_then(|e| e.checkpoint.as_ref()).is_none()
            {
                return bad("fold_quantize needs a trained or checkpointed model");
            }
            if h.fold_quantize && self.eval.is_none() {
                return bad("fold_quantize compares accuracies on the eval batches; add an eval section");
            }
        }
        Ok(())
    }

    /// A small end-to-end configuration on the distance-3 surface code.
    pub fn example() -> Self {
        let noise = NoiseModel::data_level(0.1);
        let mut model = ModelConfig::new(32, 4);
        model.variant = ConvVariant::Standard;
        let mut train = TrainConfig::new(noise, 1, 1000, 256, 1);
        train.schedule.warmup_steps = 100;
        Self {
            seed: 1,
            code: Some(CodeSection {
                preset: Some("surface:3".into()),
                file: None,
            }),
            noise: Some(noise),
            model: Some(model),
            train: Some(train),
            eval: Some(EvalSection {
                rounds: 1,
                shots: 100_000,
                p_values: vec![0.02, 0.04, 0.06, 0.08, 0.1],
                bases: default_bases(),
                checkpoint: None,
                decoders: vec![DecoderKind::Ml],
                chunk: default_chunk(),
                lookup_cutoff: default_cutoff(),
                bp_iterations: default_iterations(),
                credible_level: default_level(),
            }),
            analysis: Some(AnalysisSection {
                calibration_bins: default_bins(),
                post_select_thresholds: default_thresholds(),
                waterfall_min_points: default_min_points(),
                census: Some(CensusSection {
                    decoder: DecoderKind::Ml,
                    basis: Basis::Z,
                    wmax: 3,
                    p: 0.005,
                    budget: default_budget(),
                    lookup_cutoff: default_cutoff(),
                }),
                lambda: None,
            }),
            hardware: Some(HardwareSection {
                macs: Vec::new(),
                buffers: Vec::new(),
                roofline: None,
                fold_quantize: true,
                fp8_shots: default_fp8_shots(),
            }),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
