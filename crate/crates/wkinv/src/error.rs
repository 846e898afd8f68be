use std::io;
use std::path::PathBuf;

/// Exit code for configuration errors (bad config, bad flags, unreadable input).
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for numerical failures.
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    /// Adds context to a message-carrying error.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            AppError::Config(m) => AppError::Config(format!("{what}: {m}")),
            AppError::Numeric(m) => AppError::Numeric(format!("{what}: {m}")),
            other => other,
        }
    }
}

impl From<wkinv_core::Error> for AppError {
    fn from(e: wkinv_core::Error) -> Self {
        match e {
            wkinv_core::Error::Numeric(m) => AppError::Numeric(m),
            other => AppError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
