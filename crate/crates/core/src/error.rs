use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite intermediate at sample {sample}: {what}")]
    Numerical { sample: usize, what: String },

    #[error("missingness generation failed: {0}")]
    GenerationFailure(String),

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
