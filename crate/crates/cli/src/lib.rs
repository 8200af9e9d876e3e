//! Command-line pipeline around the `convdec` library: configuration,
//! artifact manifests, the staged run and the markdown report.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod preds;
pub mod report;

use std::fmt::Display;

use thiserror::Error;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CONVDEC_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Stage { .. } => 3,
        }
    }

    pub fn config(e: impl Display) -> Self {
        Self::Config(e.to_string())
    }

    pub fn stage(stage: &str, e: impl Display) -> Self {
        Self::Stage {
            stage: stage.to_string(),
            message: e.to_string(),
        }
    }
}

/// `map_err` adapter tagging an error with the stage it came from.
pub fn in_stage<E: Display>(stage: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::stage(stage, e)
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
