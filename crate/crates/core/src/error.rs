use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the shape-model pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("bad magic: expected `SFV1`, found {0:?}")]
    BadMagic(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: String },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("corrupt file: header declares {expected} elements but payload holds {found}")]
    PayloadMismatch { expected: usize, found: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("population member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, with file and member context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Member { source, .. } | Error::File { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by the data rather than by how the tool was invoked.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Degenerate(_) | Error::Topology(_) | Error::Numerical(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
