//! Optimisation loop: Adam with global-norm clipping over masked sequence
//! losses, truncated BPTT for streams, evaluation and checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod model;
mod optim;
mod trainer;


use std::path::PathBuf;

use crate::autodiff::AutodiffError;
use crate::cells::CellError;
use crate::tasks::TaskError;

pub use checkpoint::{Checkpoint, DataCursor, RngState, CHECKPOINT_MAGIC};
pub use config::{apply_override, parse_override, CellConfig, TrainConfig};
pub use metrics::{read_metrics, write_metrics, EvalMetrics, MetricsRecord, Split};
pub use model::{count_correct, run_sequence, run_sequence_from, unroll, Model, SequenceOutput, UnrollOptions, Unrolled, OUT_BIAS, OUT_WEIGHT};
pub use optim::{adam_step, clip_by_norm, global_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use trainer::{evaluate, train_run, RunOutput, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String, last_good: Box<Checkpoint> },
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },
    #[error("cannot access `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainingError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainingError::Io { path: path.into(), source }
    }

    /// True for problems with the run description rather than its execution.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            TrainingError::Config(_)
                | TrainingError::Cell(CellError::Config(_))
                | TrainingError::Task(_)
                | TrainingError::Io { .. }
                | TrainingError::Checkpoint { .. }
        )
    }
}
