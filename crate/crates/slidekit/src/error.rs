use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlideError {
    #[error("region {region} exceeds slide bounds {width}x{height}")]
    Bounds { region: String, width: u32, height: u32 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("cannot ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },
    #[error("no eligible tiles to sample from")]
    EmptySelection,
    #[error("class `{class}` has {patients} patient(s), fewer than the {needed} non-empty partitions")]
    Stratification { class: String, patients: usize, needed: usize },
    #[error("manifest parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("duplicate slide id `{0}`")]
    DuplicateSlide(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
