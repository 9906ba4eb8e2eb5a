//! SGD with momentum, the training loop, checkpoints and fine-tuning.

mod checkpoint;
mod config;
mod finetune;
mod sgd;
mod trainer;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, MAGIC, VERSION};
pub use config::{lr_at, LrPolicy, TrainConfig};
pub use finetune::{finetune_into, finetune_load, head_param_names};
pub use sgd::{sgd_momentum_step, OptimizerState};
pub use trainer::{snapshot_path, train, LogEntry, TrainSummary, Trainer};

use crate::data::DataError;
use crate::net::NetError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("not a checkpoint (bad magic bytes)")]
    NotCheckpoint,
    #[error("checkpoint version {found} not supported (expected {supported})")]
    Version { found: u32, supported: u32 },
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
    #[error("tensors do not match the network: {}", .0.join(", "))]
    Mismatch(Vec<String>),
    #[error("training diverged at iteration {iteration}: first non-finite tensor is {tensor}")]
    Diverged { iteration: usize, tensor: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Inconsistent(e.to_string())
    }
}
