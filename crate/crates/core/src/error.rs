use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum TdvError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("grid too large for oracle: {pixels} pixels (limit {limit})")]
    Scale { pixels: usize, limit: usize },

    #[error("no convergence after {iterations} iterations (last gap {gap:.3e})")]
    Convergence { iterations: usize, gap: f64 },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TdvError>;

impl TdvError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TdvError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        TdvError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
