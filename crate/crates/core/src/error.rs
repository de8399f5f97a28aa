use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across ingestion, numerics, training and orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ingestion error: missing mandatory file {0}")]
    MissingFile(PathBuf),

    #[error("format error in {file}:{line}: {msg}")]
    Format {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("training error at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
