use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (non-finite values, 0/0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid parameters or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Shapes that do not agree.
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss} (lr {lr})")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        lr: f64,
    },

    #[error("{path}: parse error at byte offset {offset}: {msg}")]
    Parse {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
