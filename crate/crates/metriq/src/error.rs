use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no evaluated units")]
    EmptyInput,
    #[error("record for slide `{slide_id}` has no true label")]
    MissingTruth { slide_id: String },
    #[error("label index {index} outside a {k}-class matrix")]
    Label { index: usize, k: usize },
    #[error("patient `{0}` has records with different true labels")]
    InconsistentTruth(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
