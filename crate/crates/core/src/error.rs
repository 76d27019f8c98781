use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training engine.
#[derive(Debug, Error)]
pub enum ArlError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(
        "training diverged at iteration {iteration} ({what}); last good iteration: {}",
        last_good.map_or_else(|| "none".to_string(), |i| i.to_string())
    )]
    Training {
        iteration: u64,
        last_good: Option<u64>,
        what: String,
    },

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl ArlError {
    pub(crate) fn shape(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        ArlError::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ArlError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = ArlError> = std::result::Result<T, E>;
