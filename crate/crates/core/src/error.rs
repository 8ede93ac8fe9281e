use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform for a primitive.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A caller violated an operation's precondition.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dataset is empty after {0}")]
    EmptyDataset(&'static str),

    #[error("size error: {0}")]
    Size(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from input data rather than numerics or usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::EmptyDataset(_)
                | Error::Size(_)
                | Error::Index(_)
                | Error::Io { .. }
                | Error::Checkpoint(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Training { .. } | Error::UndefinedMetric(_)
        )
    }
}
