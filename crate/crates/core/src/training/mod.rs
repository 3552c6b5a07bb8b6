//! Staged training, optimizer and checkpoint merging.

mod merge;
mod optim;
mod stage;

pub use merge::merge_models;
pub use optim::{Adam, OptimConfig};
pub use stage::{PretrainConfig, StageConfig, StageData, StageKind, StepRecord, Trainer};
