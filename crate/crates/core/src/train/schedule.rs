use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::{Model, Real};

fn default_peak_matrix() -> f64 {
    3e-3
}

fn default_peak_scalar() -> f64 {
    2e-4
}

fn default_warmup() -> u64 {
    1000
}

fn default_floor() -> f64 {
    0.1
}

fn default_weight_decay() -> f64 {
    3e-3
}

/// Linear warmup, cosine decay to `floor_fraction · peak`, then constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_peak_matrix")]
    pub peak_lr_matrix: f64,
    #[serde(default = "default_peak_scalar")]
    pub peak_lr_scalar: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    pub total_steps: u64,
    #[serde(default = "default_floor")]
    pub floor_fraction: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

impl ScheduleSpec {
    pub fn new(total_steps: u64) -> Self {
        Self {
            peak_lr_matrix: default_peak_matrix(),
            peak_lr_scalar: default_peak_scalar(),
            warmup_steps: default_warmup().min(total_steps / 10),
            total_steps,
            floor_fraction: default_floor(),
            weight_decay: default_weight_decay(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.total_steps > 0 && self.warmup_steps >= self.total_steps {
            return Err(TrainError::Config("warmup must be shorter than training".into()));
        }
        if !(self.floor_fraction > 0.0 && self.floor_fraction <= 1.0) {
            return Err(TrainError::Config("floor fraction must lie in (0, 1]".into()));
        }
        if self.peak_lr_matrix < 0.0 || self.peak_lr_scalar < 0.0 || self.weight_decay < 0.0 {
            return Err(TrainError::Config("learning rates and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    /// Multiplier applied to both peak rates at `step`.
    pub fn factor(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return step as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return self.floor_fraction;
        }
        let progress = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.floor_fraction + (1.0 - self.floor_fraction) * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Learning rate for a parameter group with the given peak.
pub fn lr_at(step: u64, peak: f64, spec: &ScheduleSpec) -> f64 {
    peak * spec.factor(step)
}

/// Easy-noise stage, linear anneal, then the target noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSpec {
    pub p1: f64,
    pub p2: f64,
    pub stage1_steps: u64,
    pub anneal_steps: u64,
}

impl CurriculumSpec {
    /// Budget check: both easy phases together take at most 2% of training.
    pub fn validate(&self, total_steps: u64) -> Result<(), TrainError> {
        if (self.stage1_steps + self.anneal_steps) as f64 > 0.02 * total_steps as f64 {
            return Err(TrainError::Config(format!(
                "curriculum takes {} of {} steps (limit 2%)",
                self.stage1_steps + self.anneal_steps,
                total_steps
            )));
        }
        for p in [self.p1, self.p2] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TrainError::Config(format!("noise level {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn curriculum_noise(step: u64, spec: &CurriculumSpec) -> f64 {
    if step < spec.stage1_steps {
        return spec.p1;
    }
    let t = step - spec.stage1_steps;
    if t >= spec.anneal_steps {
        return spec.p2;
    }
    spec.p1 + (spec.p2 - spec.p1) * t as f64 / spec.anneal_steps as f64
}

/// Exponential moving average of every tensor of a model, buffers included.
///
/// Update `t` (from 0) uses `min(decay, (1 + t) / (10 + t))` when `warmup` is
/// set, so the average does not stay anchored to the initialization.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    pub warmup: bool,
    pub updates: u64,
    pub shadow: Vec<Vec<f32>>,
}

impl Ema {
    pub fn new<T: Real>(model: &Model<T>, decay: f64) -> Self {
        Self {
            decay,
            warmup: false,
            updates: 0,
            shadow: model
                .params
                .iter()
                .map(|p| p.value.iter().map(|v| v.to_f64_lossy() as f32).collect())
                .collect(),
        }
    }

    pub fn with_warmup(mut self) -> Self {
        self.warmup = true;
        self
    }

    pub fn current_decay(&self) -> f64 {
        if self.warmup {
            let t = self.updates as f64;
            self.decay.min((1.0 + t) / (10.0 + t))
        } else {
            self.decay
        }
    }

    pub fn update(&mut self, model: &Model<f32>) {
        let b = self.current_decay() as f32;
        self.updates += 1;
        for (s, p) in self.shadow.iter_mut().zip(&model.params) {
            for (sv, &v) in s.iter_mut().zip(&p.value) {
                *sv = b * *sv + (1.0 - b) * v;
            }
        }
    }

    /// Copy of `model` carrying the averaged weights.
    pub fn model(&self, model: &Model<f32>) -> Model<f32> {
        let mut out = model.clone();
        for (p, s) in out.params.iter_mut().zip(&self.shadow) {
            p.value.clone_from(s);
        }
        out
    }
}
