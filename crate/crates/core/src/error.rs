//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor operation was called with incompatible shapes. `op` names
    /// the operation, `detail` the offending dimension.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A configuration invariant was violated; rejected before any compute.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Input data failed validation (non-binary mask, empty dataset, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A file did not conform to its on-disk format. `offset` is the byte
    /// position at which parsing failed.
    #[error("{path}: {detail} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    /// An underlying I/O operation failed.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            detail: detail.into(),
        }
    }
}
