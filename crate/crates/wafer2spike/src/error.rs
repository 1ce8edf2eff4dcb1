//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A convolution or resize would produce an empty output.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// A caller broke an API precondition (missing cache, non-binary spikes, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// NaN or infinity showed up where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Bad user-supplied values (labels out of range, malformed ratios, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A data or checkpoint file failed to parse.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// Filesystem failure, tagged with the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Error {
        Error::Dimension(msg.into())
    }

    pub fn format(offset: u64, reason: impl Into<String>) -> Error {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
