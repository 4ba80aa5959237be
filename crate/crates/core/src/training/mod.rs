//! Optimisation: configuration, learning-rate schedule, Adam with global
//! norm clipping, checkpoints, the training loop, sweeps and selection.

mod checkpoint;
mod config;
mod optim;
mod run;
mod schedule;
mod sweep;

use std::path::Path;

use thiserror::Error;

use crate::eval::EvalError;
use crate::model::ModelError;

pub use checkpoint::{BestSoFar, Checkpoint, CheckpointError, CheckpointMeta, TensorInfo};
pub use config::{apply_override, CbowSection, DataConfig, Schedule, SweepSection, TrainConfig};
pub use optim::{clip_global_norm, global_norm, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use run::{model_from_checkpoint, train, train_run, MetricRecord, RunOptions, RunOutcome, Snapshot, TrainData};
pub use schedule::lr_at;
pub use sweep::{select, sweep, two_stage_sweep, Criterion, RunSummary, Selection, SweepReport, SweepResult};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("bad override: {0}")]
    Override(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("non-finite loss at step {step} (epoch {epoch}, batch {batch})")]
    NonFinite { step: usize, epoch: u64, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[cfg(test)]
mod tests;
