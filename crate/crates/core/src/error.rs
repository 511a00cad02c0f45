use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, QnnError>;

#[derive(Debug, Error)]
pub enum QnnError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("model build failed at layer `{layer}`: {reason}")]
    Build { layer: String, reason: String },

    #[error("non-finite value produced by layer `{layer}`")]
    NonFinite { layer: String },

    #[error("io error on {path} at byte offset {offset}: {source}")]
    Io {
        path: PathBuf,
        offset: u64,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint incompatible with model: {0}")]
    Compatibility(String),

    #[error("config error: {0}")]
    Config(String),
}

impl QnnError {
    pub(crate) fn io(path: impl Into<PathBuf>, offset: u64, source: std::io::Error) -> Self {
        QnnError::Io {
            path: path.into(),
            offset,
            source,
        }
    }
}
