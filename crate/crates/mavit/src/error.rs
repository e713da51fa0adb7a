use thiserror::Error;

#[derive(Debug, Error)]
pub enum MavitError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
