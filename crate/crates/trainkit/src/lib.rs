//! Training and evaluation for the patch classifier.
//!
//! [`train`] runs minibatch SGD with momentum over augmented patches and keeps
//! the parameters with the lowest validation loss. Every batch is checked
//! against the patient split before it can produce a gradient.

pub mod ablation;
pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod synthetic;
pub mod trainer;

pub use ablation::{run_ablation, AblationRow, AblationTable, VariantScores, METRIC_COLUMNS, VARIANTS};
pub use augment::{augment, jitter, rotate, JITTER_RANGE};
pub use config::{AugmentFlags, TrainConfig};
pub use dataset::{read_config, DataSpec, Dataset, Sample, Splits};
pub use error::{CheckpointBytes, TrainError};
pub use evaluate::{evaluate, log_accuracy};
pub use synthetic::{synthetic_patch, synthetic_samples, SyntheticSpec};
pub use trainer::{
    check_batch, evaluate_loss, mix_seed, train, write_curve, EarlyStopping, EpochStats, StopDecision, TrainOutcome,
};
