use histocad_mavit::MavitError;
use histocad_slidekit::SlideError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Conflict(String),
    /// The resource exists but is not available yet (e.g. a running job's artifacts).
    #[error("{0}")]
    NotReady(String),
    #[error("{0}")]
    Precondition(String),
    #[error("config: {0}")]
    Config(String),
    #[error("illegal job transition {from} -> {to}")]
    Transition { from: String, to: String },
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Model(#[from] MavitError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        ServiceError::NotFound { kind, id: id.into() }
    }

    /// Stable machine-readable cause.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound { .. } => "not_found",
            ServiceError::Validation(_) => "validation",
            ServiceError::Slide(SlideError::Bounds { .. } | SlideError::Invalid(_) | SlideError::Ingestion { .. }) => {
                "validation"
            }
            ServiceError::Conflict(_) | ServiceError::Slide(SlideError::DuplicateSlide(_)) => "conflict",
            ServiceError::NotReady(_) => "not_ready",
            ServiceError::Precondition(_) => "precondition",
            ServiceError::Config(_) => "config",
            ServiceError::Transition { .. } => "transition",
            ServiceError::Model(_) => "model",
            ServiceError::Slide(_) | ServiceError::Io(_) | ServiceError::Internal(_) => "internal",
        }
    }
}
