use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KwsError>;

#[derive(Debug, Error)]
pub enum KwsError {
    /// Caller supplied something the operation's contract rejects.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
        /// Most recent checkpoint written before the divergence, if any.
        last_good: Option<PathBuf>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl KwsError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KwsError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KwsError::Io {
            path: path.into(),
            source,
        }
    }
}
