use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the tokenizer, the loss kernel and the file formats.
///
/// Every variant maps to a stable kebab-case code (see [`Error::code`]) that
/// the CLI and the Python bindings surface verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth {0}: depth must be finite and positive")]
    InvalidDepth(f64),

    #[error("point is behind the camera (camera-frame depth {0})")]
    BehindCamera(f64),

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("referenced mode requires `{field}` on record {index}")]
    MissingReference { field: &'static str, index: usize },

    #[error("invalid log-probability {value} for `{field}` on record {index}")]
    InvalidLogProb {
        field: &'static str,
        index: usize,
        value: f64,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("scene has no occupied voxels")]
    EmptyScene,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("malformed tensor data: {0}")]
    Format(String),

    #[error("numeric validation failed: {0}")]
    Validation(String),
}

impl Error {
    /// Stable machine-readable code for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidDepth(_) => "invalid-depth",
            Error::BehindCamera(_) => "behind-camera",
            Error::DimMismatch { .. } => "dim-mismatch",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::MissingReference { .. } => "missing-reference",
            Error::InvalidLogProb { .. } => "invalid-logprob",
            Error::EmptyBatch => "empty-batch",
            Error::EmptyScene => "empty-scene",
            Error::EmptyCorpus => "empty-corpus",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Validation(_) => "numeric-validation",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: Vec<usize>, actual: Vec<usize>) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected,
            actual,
        }
    }
}
