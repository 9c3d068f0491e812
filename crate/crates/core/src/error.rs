use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dataset has no nodes")]
    EmptyDataset,
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("query generation failed: {0}")]
    Generation(String),
    #[error("incompatible artifacts: {0}")]
    Compatibility(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
