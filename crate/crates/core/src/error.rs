use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown activation kind `{0}`")]
    UnknownActivation(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("all-zero mask")]
    AllZeroMask,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss node is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),
    #[error("differentiation record already consumed")]
    RecordConsumed,
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("unknown parameter or task `{0}`")]
    Unknown(String),
    #[error("invalid specification: {0}")]
    Invalid(String),
    #[error("key mismatch: {0}")]
    KeyMismatch(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("ill-conditioned system (condition estimate {0:e})")]
    IllConditioned(f64),
    #[error("training diverged at step {step} on task `{task}`: {detail}")]
    Divergence {
        step: usize,
        task: String,
        detail: String,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
