use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("malformed container {path:?}: {reason}")]
    Format { path: Option<PathBuf>, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(reason: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::Precondition(_) => "precondition",
            Error::Numerical(_) => "numerical",
            Error::Generation(_) => "generation",
            Error::Training(_) => "training",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
