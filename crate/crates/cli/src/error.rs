use ilv_model::ModelError;
use ilv_tomo::TomoError;
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Tomo(#[from] TomoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Tomo(e) => e.kind(),
            CliError::Model(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "invalid_config",
            CliError::Io(_) => "io",
        }
    }
}
