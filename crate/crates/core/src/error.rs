use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants fall into the four families used by the command-line exit-code
/// contract: I/O, configuration, data/shape, and runtime computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training error at step {step}: {message}")]
    Training { step: u64, message: String },

    #[error("metric computation failed in fold {fold}: {message}")]
    Metric { fold: usize, message: String },

    #[error("missing input {path}: {hint}")]
    MissingInput { path: PathBuf, hint: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 I/O, 3 configuration or missing inputs,
    /// 4 runtime computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Config(_) | Error::MissingInput { .. } | Error::Json(_) | Error::Checkpoint(_) => 3,
            Error::Shape { .. }
            | Error::Data(_)
            | Error::Numeric(_)
            | Error::Training { .. }
            | Error::Metric { .. } => 4,
        }
    }
}
