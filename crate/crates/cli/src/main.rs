use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convdec::codes::CssCode;
use convdec::hardware::{fold_model, quantize_model, BlockCostSpec, BlockVariant};
use convdec::nn::{check_gradients, load_checkpoint, save_checkpoint, ConvVariant, Model, ModelConfig};
use convdec::sim::{Basis, NoiseModel, SyndromeBatch};
use convdec_cli::commands::{
    batch_labels, buffer_row, calibration, code_summary, decode_with, lambda_from_curves, load_curve, mac_row,
    post_selection, predict_model, reference_decoder, roofline_rows, run_census, sample_batch, waterfall, write_json,
};
use convdec_cli::config::{DecoderKind, RunConfig};
use convdec_cli::pipeline::run_pipeline;
use convdec_cli::report::{build_report, REPORT_FILE};
use convdec_cli::{in_stage, CliError, Result, OUT_ENV};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "convdec", version, about = "Convolutional decoders for quantum error-correcting codes")]
struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or inspect code documents.
    #[command(subcommand)]
    Code(CodeCmd),
    /// Sample a memory experiment into a batch file.
    Sample(SampleArgs),
    /// Train a model from a run config (code and train sections).
    Train(RunArgs),
    /// Decode a batch with a reference decoder or a trained model.
    Decode(DecodeArgs),
    /// Fits, failure-mode census and calibration.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Inference cost models, batch-norm folding and FP8 quantization.
    #[command(subcommand)]
    Hw(HwCmd),
    /// Network utilities.
    #[command(subcommand)]
    Nn(NnCmd),
    /// Run every configured stage.
    Run(RunArgs),
    /// Summarize an artifact directory as markdown.
    Report {
        dir: PathBuf,
        /// Defaults to `<dir>/report.md`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a complete example run config.
    Example,
}

#[derive(Subcommand)]
enum CodeCmd {
    Build {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    Info { path: PathBuf },
}

#[derive(Args)]
struct CodeSource {
    /// Code document.
    #[arg(long, conflicts_with = "preset")]
    code: Option<PathBuf>,
    /// Code preset id.
    #[arg(long)]
    preset: Option<String>,
}

impl CodeSource {
    fn load(&self) -> Result<CssCode> {
        match (&self.code, &self.preset) {
            (Some(p), _) => CssCode::load(p).map_err(CliError::config),
            (None, Some(id)) => CssCode::preset(id).map_err(CliError::config),
            (None, None) => Err(CliError::Config("give --code or --preset".into())),
        }
    }
}

fn parse_basis(s: &str) -> std::result::Result<Basis, String> {
    match s {
        "x" | "X" => Ok(Basis::X),
        "z" | "Z" => Ok(Basis::Z),
        _ => Err(format!("basis must be x or z, got {s:?}")),
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    code: CodeSource,
    #[arg(long)]
    rounds: usize,
    /// `data:p`, `phenom:p[:q]` or `circuit:p`.
    #[arg(long)]
    noise: String,
    #[arg(long)]
    shots: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_parser = parse_basis, default_value = "z")]
    basis: Basis,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; defaults to `$CONVDEC_OUT/<config hash>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, value_enum, required_unless_present = "model")]
    decoder: Option<DecoderKind>,
    /// Decode with a trained checkpoint instead.
    #[arg(long, conflicts_with = "decoder")]
    model: Option<PathBuf>,
    #[command(flatten)]
    code: CodeSource,
    #[arg(long)]
    batch: PathBuf,
    #[arg(long, value_parser = parse_basis, default_value = "z")]
    basis: Basis,
    /// Physical rate setting the decoder prior.
    #[arg(long, default_value_t = 0.01)]
    p: f64,
    #[arg(long, default_value_t = 3)]
    cutoff: usize,
    #[arg(long, default_value_t = convdec::decoders::DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = 4096)]
    chunk: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Λ fit over curves of several distances.
    Lambda {
        /// `d=path.csv`, one per distance.
        #[arg(long = "curve", required = true)]
        curves: Vec<String>,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-power-law and single-power fits of one curve.
    Waterfall {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimal failure modes of a reference decoder.
    Census {
        #[command(flatten)]
        code: CodeSource,
        #[arg(long, value_enum, default_value = "ml")]
        decoder: DecoderKind,
        #[arg(long, value_parser = parse_basis, default_value = "z")]
        basis: Basis,
        #[arg(long)]
        wmax: usize,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = convdec::analysis::DEFAULT_BUDGET)]
        budget: u64,
        #[arg(long, default_value_t = 3)]
        cutoff: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reliability diagram and post-selection curve of stored predictions.
    Calibrate {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, default_value_t = convdec::analysis::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,0.95,0.99")]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Copy)]
struct BlockArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    hidden: u64,
    #[arg(long, default_value_t = 4)]
    bottleneck: u64,
    #[arg(long, default_value_t = 27)]
    kernel: u64,
    #[arg(long, default_value_t = 1)]
    layers: u64,
}

impl BlockArgs {
    fn spec(self, variant: BlockVariant) -> BlockCostSpec {
        BlockCostSpec {
            n: self.n,
            hidden: self.hidden,
            bottleneck: self.bottleneck,
            kernel: self.kernel,
            layers: self.layers,
            variant,
        }
    }
}

fn parse_variant(s: &str) -> std::result::Result<BlockVariant, String> {
    s.parse().map_err(|e: convdec::hardware::HardwareError| e.to_string())
}

#[derive(Subcommand)]
enum HwCmd {
    /// MAC counts; every variant unless one is named.
    Macs {
        #[command(flatten)]
        block: BlockArgs,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<BlockVariant>,
    },
    /// Roofline latency under both round conventions.
    Roofline {
        #[arg(long = "preset", default_values = ["versal", "tpu-v1", "edge-tpu"])]
        presets: Vec<String>,
        #[arg(long = "code", required = true)]
        codes: Vec<String>,
        #[arg(long)]
        hidden: u64,
        #[arg(long, default_value_t = 4)]
        bottleneck: u64,
        #[arg(long, value_parser = parse_variant, default_value = "conv")]
        variant: BlockVariant,
        /// Defaults to the code distance.
        #[arg(long)]
        layers: Option<u64>,
    },
    /// Activation and weight buffer sizes for both convolution variants.
    Buffers {
        #[command(flatten)]
        block: BlockArgs,
        #[arg(long, default_value_t = 1)]
        bytes: u64,
    },
    /// Fold batch norms into the adjacent weights.
    Fold {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Round weights to FP8 (E4M3) at per-tensor scale.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum NnCmd {
    /// Finite-difference gradient check of a freshly initialized model in f64.
    Gradcheck {
        #[arg(long, default_value = "surface:3")]
        preset: String,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long)]
        depthwise: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        #[arg(long, default_value_t = 4)]
        shots: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

/// Writes a line to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    if let Some(p) = out {
        write_json(p, value).map_err(CliError::config)?;
    }
    emit(&serde_json::to_string_pretty(value).expect("serializable"));
    Ok(())
}

fn default_dir(config: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(&config.hash()[..12])
    })
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(load_checkpoint(path).map_err(CliError::config)?.model)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::config)?;
    }
    match cli.command {
        Command::Code(CodeCmd::Build { preset, out }) => {
            let code = CssCode::preset(&preset).map_err(CliError::config)?;
            code.save(&out).map_err(in_stage("code"))?;
            print_json(&code_summary(&code), None)
        }
        Command::Code(CodeCmd::Info { path }) => {
            let code = CssCode::load(&path).map_err(CliError::config)?;
            print_json(&code_summary(&code), None)
        }
        Command::Sample(a) => {
            let code = a.code.load()?;
            let noise: NoiseModel = a.noise.parse().map_err(CliError::config)?;
            let batch = sample_batch(&code, a.rounds, a.basis, &noise, a.shots, a.seed).map_err(CliError::config)?;
            batch.save(&a.out).map_err(in_stage("sample"))?;
            print_json(
                &json!({ "shots": batch.shots, "rounds": batch.rounds, "checks_per_round": batch.checks_per_round,
                    "observables": batch.observables, "detections": batch.count_detections() }),
                None,
            )
        }
        Command::Train(a) => {
            let mut config = RunConfig::load(&a.config)?;
            if config.train.is_none() {
                return Err(CliError::Config("config has no train section".into()));
            }
            config.eval = None;
            config.analysis = None;
            config.hardware = None;
            let dir = default_dir(&config, a.out);
            run_pipeline(&config, &dir, true)?;
            emit(&dir.display().to_string());
            Ok(())
        }
        Command::Run(a) => {
            let config = RunConfig::load(&a.config)?;
            let dir = default_dir(&config, a.out);
            run_pipeline(&config, &dir, true)?;
            emit(&dir.display().to_string());
            Ok(())
        }
        Command::Decode(a) => decode(a),
        Command::Analyze(cmd) => analyze(cmd),
        Command::Hw(cmd) => hw(cmd),
        Command::Nn(NnCmd::Gradcheck {
            preset,
            hidden,
            layers,
            depthwise,
            seed,
            rounds,
            shots,
            step,
            tolerance,
        }) => {
            let code = CssCode::preset(&preset).map_err(CliError::config)?;
            let mut mc = ModelConfig::new(hidden, layers);
            mc.init_seed = seed;
            if depthwise {
                mc.variant = ConvVariant::Depthwise;
            }
            let model: Model<f64> = Model::new(mc, &code).map_err(CliError::config)?;
            let batch = sample_batch(&code, rounds, Basis::Z, &NoiseModel::data_level(0.1), shots, seed)
                .map_err(in_stage("nn"))?;
            let (x, labels) = convdec::train::batch_inputs(&batch, &code).map_err(in_stage("nn"))?;
            let report = check_gradients(&model, &x, &labels, Basis::Z, step, tolerance, Some(64)).map_err(in_stage("nn"))?;
            print_json(&report, None)?;
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::stage("nn", format!("worst relative error {:.3e}", report.worst())))
            }
        }
        Command::Report { dir, out } => {
            let r = build_report(&dir);
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            let path = out.unwrap_or_else(|| dir.join(REPORT_FILE));
            if dir.is_dir() {
                std::fs::write(&path, &r.markdown).map_err(in_stage("report"))?;
            }
            print!("{}", r.markdown);
            Ok(())
        }
        Command::Example => {
            emit(&serde_json::to_string_pretty(&RunConfig::example()).expect("serializable"));
            Ok(())
        }
    }
}

fn decode(a: DecodeArgs) -> Result<()> {
    let code = a.code.load()?;
    let batch = SyndromeBatch::load(&a.batch).map_err(CliError::config)?;
    let labels = batch_labels(&batch);
    let preds = match (&a.model, a.decoder) {
        (Some(path), _) => {
            let model = load_model(path)?;
            if model.code != code {
                return Err(CliError::Config("checkpoint was trained on a different code".into()));
            }
            predict_model(&model, &batch, a.basis, a.chunk).map_err(in_stage("decode"))?
        }
        (None, Some(kind)) => {
            let dec = reference_decoder(kind, &code, a.basis, a.p, a.cutoff, a.iterations).map_err(CliError::config)?;
            decode_with(dec.as_ref(), &batch).map_err(in_stage("decode"))?
        }
        (None, None) => return Err(CliError::Config("give --decoder or --model".into())),
    };
    preds.save(&a.out).map_err(in_stage("decode"))?;
    let failures = preds.failures(&labels);
    print_json(
        &json!({ "shots": batch.shots, "failures": failures,
            "block_error_rate": failures as f64 / batch.shots.max(1) as f64 }),
        None,
    )
}

fn analyze(cmd: AnalyzeCmd) -> Result<()> {
    match cmd {
        AnalyzeCmd::Lambda { curves, p, out } => {
            let mut loaded = Vec::new();
            for c in &curves {
                let (d, path) = c
                    .split_once('=')
                    .ok_or_else(|| CliError::Config(format!("expected d=path, got {c:?}")))?;
                let d: usize = d.parse().map_err(|_| CliError::Config(format!("bad distance in {c:?}")))?;
                loaded.push((d, load_curve(Path::new(path)).map_err(CliError::config)?));
            }
            let r = lambda_from_curves(&loaded, p).map_err(in_stage("analyze"))?;
            print_json(&r, out.as_deref())
        }
        AnalyzeCmd::Waterfall { curve, out } => {
            let points = load_curve(&curve).map_err(CliError::config)?;
            print_json(&waterfall(&points), out.as_deref())
        }
        AnalyzeCmd::Census {
            code,
            decoder,
            basis,
            wmax,
            p,
            budget,
            cutoff,
            out,
        } => {
            let code = code.load()?;
            let r = run_census(&code, decoder, basis, wmax, p, budget, cutoff).map_err(in_stage("analyze"))?;
            print_json(&r, out.as_deref())
        }
        AnalyzeCmd::Calibrate {
            preds,
            batch,
            bins,
            thresholds,
            out,
        } => {
            let preds = convdec_cli::preds::Predictions::load(&preds).map_err(CliError::config)?;
            let batch = SyndromeBatch::load(&batch).map_err(CliError::config)?;
            let labels = batch_labels(&batch);
            let probs: Vec<f64> = preds
                .probabilities
                .as_ref()
                .ok_or_else(|| CliError::Config("predictions carry no probabilities".into()))?
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            let report = calibration(&probs, &labels, bins).map_err(in_stage("analyze"))?;
            let post = post_selection("batch", &preds, &labels, &thresholds, batch.rounds).map_err(in_stage("analyze"))?;
            print_json(&json!({ "calibration": report, "post_selection": post }), out.as_deref())
        }
    }
}

fn hw(cmd: HwCmd) -> Result<()> {
    match cmd {
        HwCmd::Macs { block, variant } => {
            let variants = match variant {
                Some(v) => vec![v],
                None => vec![
                    BlockVariant::Conv,
                    BlockVariant::Depthwise,
                    BlockVariant::LocalAttention,
                    BlockVariant::FullAttention,
                ],
            };
            let rows = variants
                .into_iter()
                .map(|v| mac_row(&block.spec(v)))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(CliError::config)?;
            print_json(&rows, None)
        }
        HwCmd::Roofline {
            presets,
            codes,
            hidden,
            bottleneck,
            variant,
            layers,
        } => {
            let rows = roofline_rows(&presets, &codes, hidden, bottleneck, variant, layers).map_err(CliError::config)?;
            print_json(&rows, None)
        }
        HwCmd::Buffers { block, bytes } => {
            let rows = [BlockVariant::Conv, BlockVariant::Depthwise]
                .into_iter()
                .map(|v| buffer_row(&block.spec(v), bytes))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(CliError::config)?;
            print_json(&rows, None)
        }
        HwCmd::Fold { model, out } => {
            let ck = load_checkpoint(&model).map_err(CliError::config)?;
            let (folded, report) = fold_model(&ck.model).map_err(in_stage("hw"))?;
            save_checkpoint(&out, &folded, json!({ "source": ck.metadata, "weights": "folded" })).map_err(in_stage("hw"))?;
            print_json(&report, None)
        }
        HwCmd::Quantize { model, out } => {
            let ck = load_checkpoint(&model).map_err(CliError::config)?;
            let q = quantize_model(&ck.model);
            save_checkpoint(&out, &q.model, json!({ "source": ck.metadata, "weights": "fp8", "scales": q.scales }))
                .map_err(in_stage("hw"))?;
            print_json(&json!({ "scales": q.scales }), None)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
