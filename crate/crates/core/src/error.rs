use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmpError {
    #[error("path not found: {0}")]
    MissingPath(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported bit depth: maxval {0} (only 8-bit and 16-bit samples are accepted)")]
    UnsupportedDepth(u32),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid mask value {0} (masks hold only 0 and 255)")]
    InvalidMaskValue(u16),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate labels: roc auc needs at least one positive and one negative")]
    DegenerateLabels,

    #[error("evaluation input error: {0}")]
    Eval(String),

    #[error("phantom configuration error: {0}")]
    Phantom(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl GmpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GmpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        GmpError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GmpError>;
