use std::path::PathBuf;

use thiserror::Error;

/// Tensor axes, used to name the offending dimension in shape errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channel,
    Height,
    Width,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Axis::Batch => "batch",
            Axis::Channel => "channel",
            Axis::Height => "height",
            Axis::Width => "width",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {axis} axis (expected {expected}, found {found})")]
    Shape {
        op: &'static str,
        axis: Axis,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("spec mismatch: field `{field}` differs")]
    SpecMismatch { field: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("no valid target pixels in batch")]
    NoValidPixels,

    #[error("non-positive variance {0}")]
    NonPositiveVariance(f64),

    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("degenerate field: zero variance")]
    DegenerateField,

    #[error("tile {tile} failed: {reason}")]
    TileFailed { tile: u64, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, axis: Axis, expected: usize, found: usize) -> Self {
        Error::Shape {
            op,
            axis,
            expected,
            found,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
