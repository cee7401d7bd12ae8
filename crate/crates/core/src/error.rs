use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value in {context} at index {index}")]
    Numeric { context: String, index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mask generation failed: {0}")]
    Generation(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn numeric(context: impl Into<String>, index: usize) -> Self {
        Error::Numeric { context: context.into(), index }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Failures while decoding checkpoint or archive bytes.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("truncated or malformed payload: {0}")]
    Payload(String),

    #[error("invalid architecture descriptor: {0}")]
    Descriptor(String),
}
