use thiserror::Error;

pub type TomoResult<T> = Result<T, TomoError>;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("view index {index} out of range for {n_views} views")]
    ViewOutOfRange { index: usize, n_views: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("wrong file kind: expected {expected}, found {found}")]
    WrongKind { expected: u8, found: u8 },
    #[error("truncated payload: header promises {expected} bytes, file has {found}")]
    Truncated { expected: usize, found: usize },
    #[error("oversized payload: header promises {expected} bytes, file has {found}")]
    Oversized { expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl TomoError {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            TomoError::InvalidGeometry(_) => "invalid_geometry",
            TomoError::ViewOutOfRange { .. } => "view_out_of_range",
            TomoError::DimensionMismatch(_) => "dimension_mismatch",
            TomoError::NonFinite(_) => "non_finite",
            TomoError::InvalidArgument(_) => "invalid_argument",
            TomoError::BadMagic { .. } => "bad_magic",
            TomoError::WrongKind { .. } => "wrong_kind",
            TomoError::Truncated { .. } => "truncated_payload",
            TomoError::Oversized { .. } => "oversized_payload",
            TomoError::Io(_) => "io",
        }
    }
}
