use ilv_autodiff::AdError;
use ilv_tomo::TomoError;
use thiserror::Error;

pub type ModelResult<T> = Result<T, ModelError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Tomo(#[from] TomoError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("gaussian file: {0}")]
    GaussianFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ModelError {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::Autodiff(AdError::Shape { .. }) => "shape_mismatch",
            ModelError::Autodiff(AdError::Checkpoint(_)) => "bad_checkpoint",
            ModelError::Autodiff(AdError::Io(_)) => "io",
            ModelError::Autodiff(_) => "autodiff",
            ModelError::Tomo(e) => e.kind(),
            ModelError::Config(_) => "invalid_config",
            ModelError::InvalidArgument(_) => "invalid_argument",
            ModelError::NonFiniteLoss { .. } => "non_finite_loss",
            ModelError::GaussianFile(_) => "bad_gaussian_file",
            ModelError::Io(_) => "io",
        }
    }
}
