use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid label {label} for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("index {index} out of range (valid: {valid})")]
    InvalidIndex { index: usize, valid: String },

    #[error("network build failed at layer {layer} ({descriptor}): {reason}")]
    Build {
        layer: usize,
        descriptor: String,
        reason: String,
    },

    #[error("layer {layer} diverged (non-finite weights){}", location(.epoch, .batch))]
    Divergence {
        layer: String,
        epoch: Option<usize>,
        batch: Option<usize>,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(epoch: &Option<usize>, batch: &Option<usize>) -> String {
    match (epoch, batch) {
        (Some(e), Some(b)) => format!(" at epoch {e}, batch {b}"),
        (Some(e), None) => format!(" at epoch {e}"),
        _ => String::new(),
    }
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Attaches an epoch/batch position to a divergence error.
    pub fn at(self, epoch: usize, batch: Option<usize>) -> Self {
        match self {
            Error::Divergence { layer, .. } => Error::Divergence {
                layer,
                epoch: Some(epoch),
                batch,
            },
            other => other,
        }
    }
}
