//! Two-phase training: configuration, data preparation, checkpoints and
//! the adversarial training loop.

mod checkpoint;
mod config;
mod data;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointMeta, RngState, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use data::{build_gaussian_store, utterance_features, TrainingSet, TrainingUtterance};
pub use trainer::{checkpoint_path, run_training, LossLog, LossRecord, Trainer};
