use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty build group")]
    EmptyGroup,

    #[error("unknown build {0}")]
    UnknownBuild(u64),

    #[error("unknown test case {0:?}")]
    UnknownTest(String),

    #[error("insufficient training builds: {0}")]
    InsufficientTraining(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Displays the path only; the cause is the error source.
    #[error("{}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for internal invariant violations (as opposed to bad input).
    pub fn is_invariant(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }

    /// True for configuration problems a caller fixes by changing flags or config files.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
