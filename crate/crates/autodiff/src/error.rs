use thiserror::Error;

pub type AdResult<T> = Result<T, AdError>;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: invalid argument: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl AdError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AdError::Shape { op, detail: detail.into() }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        AdError::Invalid { op, detail: detail.into() }
    }
}
