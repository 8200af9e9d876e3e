use std::sync::mpsc::sync_channel;

use serde::{Deserialize, Serialize};

use super::optim::{LionConfig, MuonConfig, Optimizer};
use super::schedule::{curriculum_noise, lr_at, CurriculumSpec, Ema, ScheduleSpec};
use super::TrainError;
use crate::codes::CssCode;
use crate::nn::{Mode, Model, ModelConfig, NnError};
use crate::nn::real::sigmoid;
use crate::sim::{build_memory_circuit, sample, syndrome_to_tensor, Basis, NoiseModel, SyndromeBatch};
use crate::tensor::Tensor;

/// Which memory experiment each step samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisPlan {
    /// Z on even steps, X on odd steps.
    #[default]
    Alternate,
    X,
    Z,
}

impl BasisPlan {
    pub fn at(self, step: u64) -> Basis {
        match self {
            Self::Alternate if step % 2 == 1 => Basis::X,
            Self::Alternate | Self::Z => Basis::Z,
            Self::X => Basis::X,
        }
    }
}

fn default_clip() -> f64 {
    1.0
}

fn default_ema() -> f64 {
    0.9998
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Target noise; a curriculum, when present, ramps up to `noise.p`.
    pub noise: NoiseModel,
    pub rounds: usize,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub curriculum: Option<CurriculumSpec>,
    #[serde(default)]
    pub muon: MuonConfig,
    #[serde(default)]
    pub lion: LionConfig,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_ema")]
    pub ema_decay: f64,
    /// Ramp the EMA decay up from 0.1 over the first updates.
    #[serde(default = "default_true")]
    pub ema_warmup: bool,
    #[serde(default)]
    pub basis: BasisPlan,
    /// Checkpoint period in steps; 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn new(noise: NoiseModel, rounds: usize, steps: u64, batch: usize, seed: u64) -> Self {
        Self {
            noise,
            rounds,
            steps,
            batch,
            seed,
            schedule: ScheduleSpec::new(steps),
            curriculum: None,
            muon: MuonConfig::default(),
            lion: LionConfig::default(),
            grad_clip: default_clip(),
            ema_decay: default_ema(),
            ema_warmup: true,
            basis: BasisPlan::Alternate,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.noise.validate()?;
        self.schedule.validate()?;
        if self.schedule.total_steps != self.steps {
            return Err(TrainError::Config("schedule.total_steps must equal steps".into()));
        }
        if let Some(c) = &self.curriculum {
            c.validate(self.steps)?;
            if c.p2 != self.noise.p {
                return Err(TrainError::Config("curriculum must end at the target noise".into()));
            }
        }
        if self.rounds == 0 || self.batch == 0 {
            return Err(TrainError::Config("rounds and batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) || self.grad_clip <= 0.0 {
            return Err(TrainError::Config("invalid EMA decay or clip threshold".into()));
        }
        Ok(())
    }

    /// Noise model used at `step`; measurement noise scales with `p`.
    pub fn noise_at(&self, step: u64) -> NoiseModel {
        let Some(c) = &self.curriculum else {
            return self.noise;
        };
        let p = curriculum_noise(step, c);
        let q = if self.noise.p > 0.0 { self.noise.q * p / self.noise.p } else { self.noise.q };
        NoiseModel { p, q: q.min(1.0), ..self.noise }
    }

    /// Sampler seed of one step.
    pub fn step_seed(&self, step: u64) -> u64 {
        mix(self.seed, step)
    }
}

/// SplitMix64 finalizer of `seed ⊕ φ·(step+1)`.
pub fn mix(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ (step.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub p: f64,
    pub grad_norm: f64,
}

pub enum TrainEvent<'a> {
    Step(&'a StepMetrics),
    Checkpoint { step: u64, model: &'a Model<f32>, ema: &'a Model<f32> },
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    /// Averaged weights; these are the ones to evaluate.
    pub ema: Model<f32>,
    pub history: Vec<StepMetrics>,
}

/// Input tensor and `[shots × observables]` labels of a sampled batch.
pub fn batch_inputs(batch: &SyndromeBatch, code: &CssCode) -> Result<(Tensor<f32>, Vec<bool>), TrainError> {
    let x = syndrome_to_tensor(batch, code)?;
    let labels = (0..batch.shots).flat_map(|s| batch.shot_labels(s)).collect();
    Ok((x, labels))
}

struct Prepared {
    step: u64,
    p: f64,
    basis: Basis,
    x: Tensor<f32>,
    labels: Vec<bool>,
}

fn prepare(config: &TrainConfig, code: &CssCode, step: u64) -> Result<Prepared, TrainError> {
    let noise = config.noise_at(step);
    let basis = config.basis.at(step);
    let circuit = build_memory_circuit(code, config.rounds, basis, &noise)?;
    let batch = sample(&circuit, config.batch, config.step_seed(step));
    let (x, labels) = batch_inputs(&batch, code)?;
    Ok(Prepared {
        step,
        p: noise.p,
        basis,
        x,
        labels,
    })
}

/// Trains `model` in place. Batches are generated on a helper thread, two
/// steps ahead; each batch depends only on `(seed, step)`.
pub fn train(
    model: Model<f32>,
    config: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut model = model;
    let mut opt = Optimizer::new(&model, config.muon.clone(), config.lion.clone(), config.schedule.weight_decay);
    let mut ema = Ema::new(&model, config.ema_decay);
    ema.warmup = config.ema_warmup;
    let mut history = Vec::with_capacity(config.steps as usize);
    let code = model.code.clone();
    std::thread::scope(|scope| -> Result<(), TrainError> {
        let (tx, rx) = sync_channel(2);
        let producer_code = code.clone();
        scope.spawn(move || {
            for step in 0..config.steps {
                let item = prepare(config, &producer_code, step);
                let failed = item.is_err();
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        });
        for item in rx.iter() {
            let b = item?;
            let (loss, mut grads, cache) = model.loss_and_grad(&b.x, &b.labels, b.basis)?;
            let loss = f64::from(loss);
            let grad_norm = f64::from(grads.norm());
            if !loss.is_finite() || !grad_norm.is_finite() {
                return Err(TrainError::Diverged { step: b.step });
            }
            if grad_norm > config.grad_clip {
                grads.scale((config.grad_clip / grad_norm) as f32);
            }
            model.update_running_stats(&cache);
            let lr_m = lr_at(b.step, config.schedule.peak_lr_matrix, &config.schedule);
            let lr_v = lr_at(b.step, config.schedule.peak_lr_scalar, &config.schedule);
            opt.step(&mut model, &grads, lr_m, lr_v);
            ema.update(&model);
            let metrics = StepMetrics {
                step: b.step,
                loss,
                lr: lr_m,
                p: b.p,
                grad_norm,
            };
            on_event(TrainEvent::Step(&metrics));
            history.push(metrics);
            let done = b.step + 1;
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.steps {
                let averaged = ema.model(&model);
                on_event(TrainEvent::Checkpoint {
                    step: done,
                    model: &model,
                    ema: &averaged,
                });
            }
        }
        Ok(())
    })?;
    let averaged = ema.model(&model);
    Ok(TrainOutcome {
        model,
        ema: averaged,
        history,
    })
}

/// Predictions of a model on freshly sampled memory experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub shots: usize,
    pub observables: usize,
    /// Shots with at least one wrongly predicted observable.
    pub failures: usize,
    /// `P(flip)` per shot and observable.
    pub probabilities: Vec<f32>,
    pub labels: Vec<bool>,
}

impl Evaluation {
    pub fn block_error_rate(&self) -> f64 {
        self.failures as f64 / self.shots.max(1) as f64
    }
}

/// Eval-mode predictions on a stored batch, processed in chunks of `chunk` shots.
pub fn predict(model: &Model<f32>, batch: &SyndromeBatch, basis: Basis, chunk: usize) -> Result<Evaluation, TrainError> {
    predict_with(&model.code, batch, chunk, |x| model.forward(x, basis, Mode::Eval))
}

/// [`predict`] through any forward function producing logits.
pub fn predict_with<F>(code: &CssCode, batch: &SyndromeBatch, chunk: usize, forward: F) -> Result<Evaluation, TrainError>
where
    F: Fn(&Tensor<f32>) -> Result<Tensor<f32>, NnError>,
{
    let k = batch.observables;
    let mut probabilities = Vec::with_capacity(batch.shots * k);
    let mut labels = Vec::with_capacity(batch.shots * k);
    let mut start = 0;
    while start < batch.shots {
        let len = chunk.max(1).min(batch.shots - start);
        let part = batch.slice(start, len);
        let (x, l) = batch_inputs(&part, code)?;
        let logits = forward(&x)?;
        probabilities.extend(logits.data.iter().map(|&z| sigmoid(z)));
        labels.extend(l);
        start += len;
    }
    let failures = probabilities
        .chunks(k.max(1))
        .zip(labels.chunks(k.max(1)))
        .filter(|(p, l)| p.iter().zip(*l).any(|(&p, &l)| (p > 0.5) != l))
        .count();
    Ok(Evaluation {
        shots: batch.shots,
        observables: k,
        failures,
        probabilities,
        labels,
    })
}

/// Samples `shots` memory experiments and evaluates `model` on them.
pub fn evaluate(
    model: &Model<f32>,
    noise: &NoiseModel,
    rounds: usize,
    basis: Basis,
    shots: usize,
    seed: u64,
) -> Result<Evaluation, TrainError> {
    let circuit = build_memory_circuit(&model.code, rounds, basis, noise)?;
    let batch = sample(&circuit, shots, seed);
    predict(model, &batch, basis, 4096)
}

/// Builds the model a training config starts from.
pub fn init_model(config: ModelConfig, code: &CssCode) -> Result<Model<f32>, TrainError> {
    Ok(Model::new(config, code)?)
}
