//! Per-view training: configuration, SGD with momentum, the epoch loop,
//! checkpoints and finite-difference gradient verification.

mod checkpoint;
mod config;
mod gradcheck;
mod sgd;
mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{AugmentSetting, TrainConfig};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckEntry, GradCheckOptions, GradCheckReport, Objective};
pub use sgd::sgd_step;
pub use trainer::{EpochReport, Sample, Trainer};
