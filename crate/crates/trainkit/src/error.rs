use std::path::PathBuf;

use histocad_mavit::MavitError;
use histocad_metriq::MetricError;
use histocad_slidekit::{Partition, SlideError};
use thiserror::Error;

/// Serialized checkpoint carried by an error; `Debug` shows only its size.
#[derive(Clone, PartialEq, Eq)]
pub struct CheckpointBytes(pub Box<[u8]>);

impl std::ops::Deref for CheckpointBytes {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for CheckpointBytes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CheckpointBytes({} bytes)", self.0.len())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("patient `{patient}` belongs to the {partition:?} split but reached a training batch")]
    Leakage { patient: String, partition: Option<Partition> },
    /// `last_good` holds the checkpoint bytes of the best model seen so far.
    #[error("loss became non-finite in epoch {epoch}")]
    Divergence { epoch: usize, last_good: CheckpointBytes },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("checkpoint classes do not match the dataset labels: {0}")]
    Compatibility(String),
    #[error("cannot read {path}: {reason}")]
    Input { path: PathBuf, reason: String },
    #[error(transparent)]
    Model(#[from] MavitError),
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Log(#[from] histocad_core::LogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
