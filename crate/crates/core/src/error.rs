use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A map, environment or run configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called in a state that does not permit it.
    #[error("usage error: {0}")]
    Usage(String),

    /// Tensor or batch shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A loss, gradient or reward became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A checkpoint does not match the configuration it is loaded against.
    #[error("checkpoint mismatch on field `{field}`: expected {expected}, found {found}")]
    CheckpointMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
