use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("counter configuration is disabled")]
    CounterDisabled,

    #[error("reselection never happens with keep probability 1")]
    InfiniteInterval,

    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("missing PRR bin: {0}")]
    MissingBin(String),

    #[error("config hash mismatch: outputs in {dir} were produced by {found}, manifest resolves to {expected}")]
    HashMismatch {
        dir: PathBuf,
        found: String,
        expected: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from user configuration rather than runtime.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::CounterDisabled | Error::InfiniteInterval | Error::HashMismatch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
