//! The BiLSTM detector over sensitivity/importance traces: feature
//! augmentation, the sequence model, training, inference, and
//! checkpointing.

mod augment;
mod checkpoint;
mod model;
mod train;

pub use augment::{augment, AugmentedInput, NormalizationStats};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use model::{DetectorConfig, DetectorModel};
pub use train::{
    predict, predict_batch, separable_trace_dataset, train, EpochLog, TrainingConfig, TrainingLog,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("parameter count {actual} does not match the required {expected}")]
    ParamCountMismatch { expected: usize, actual: usize },
    #[error("normalization statistics have not been fitted")]
    StatsNotFitted,
    #[error("forward pass received an empty batch")]
    EmptyBatch,
    #[error("training data contains only one class")]
    SingleClassDataset,
    #[error("training data has {actual} samples; at least {minimum} required")]
    DatasetTooSmall { actual: usize, minimum: usize },
    #[error("loss became non-finite during training")]
    NonFiniteLoss,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
