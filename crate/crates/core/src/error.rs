use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented precondition.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite or otherwise corrupt numeric state.
    #[error("numerical fault: {0}")]
    Fault(String),

    #[error("degenerate geometry: vehicle within {range:e} m of the landmark")]
    DegenerateGeometry { range: f64 },

    #[error("filter divergence: innovation covariance condition number {condition:e}")]
    FilterDivergence { condition: f64 },

    /// API misuse, e.g. stepping a finished episode.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Optimizer produced a non-finite loss; parameters were rolled back.
    #[error("training fault: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents (trace CSV, checkpoint).
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn fault(msg: impl Into<String>) -> Self {
        Error::Fault(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
