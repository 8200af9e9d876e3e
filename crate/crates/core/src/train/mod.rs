//! Optimizers, schedules and the training loop with on-the-fly sampling.

mod optim;
mod runner;
mod schedule;

pub use optim::{lion_step, muon_step, newton_schulz, LionConfig, MuonConfig, Optimizer};
pub use runner::{
    batch_inputs, evaluate, init_model, mix, predict, predict_with, train, BasisPlan, Evaluation, StepMetrics, TrainConfig,
    TrainEvent, TrainOutcome,
};
pub use schedule::{curriculum_noise, lr_at, CurriculumSpec, Ema, ScheduleSpec};

use thiserror::Error;

use crate::nn::NnError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss or gradient became non-finite at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
