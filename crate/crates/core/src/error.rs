use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UalError>;

#[derive(Debug, Error)]
pub enum UalError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("format error in {file}: {reason}")]
    Format { file: PathBuf, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("region error: {0}")]
    Region(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error in {file}: {reason}")]
    Checkpoint { file: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl UalError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UalError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(file: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        UalError::Format {
            file: file.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            UalError::Config(_) | UalError::Dimension(_) => 2,
            UalError::Numeric(_) => 4,
            _ => 3,
        }
    }
}
