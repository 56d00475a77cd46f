//! Library error type.

use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value or unknown configuration key.
    #[error("config: {0}")]
    Config(String),

    /// A precondition on an operation's inputs was violated.
    #[error("validation: {0}")]
    Validation(String),

    /// Tensor shapes incompatible with the requested operation.
    #[error("shape: {0}")]
    Shape(String),

    /// Filesystem failure, tagged with the offending path.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Image decode/encode failure, tagged with the offending path.
    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    /// Dataset-level failure (empty folder, too few samples, ...).
    #[error("dataset: {0}")]
    Data(String),

    /// Checkpoint integrity or spec-mismatch failure.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Training aborted on a non-finite loss; carries a diagnostic snapshot.
    #[error("non-finite loss at iteration {iteration}: {details}")]
    NonFinite { iteration: u64, details: String },

    /// Error propagated from the tensor backend.
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
