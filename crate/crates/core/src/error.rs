use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Array or vector sizes that must agree do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A derivative order the engine cannot produce was requested.
    #[error("unsupported derivative order {requested} (maximum {max})")]
    UnsupportedOrder { requested: usize, max: usize },

    /// A jet or plan lacks a derivative component that a computation needs.
    #[error("missing derivative component: {0}")]
    MissingComponent(&'static str),

    /// Non-finite values appeared where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file was read but its contents do not follow the expected format.
    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: unsupported version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: String,
        expected: String,
    },

    /// Sensor meshes, evaluation meshes or domains are incompatible.
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    /// Covariance too close to singular for matrix square roots.
    #[error("covariance is near-singular (minimum eigenvalue {0:e})")]
    Singular(f64),

    #[error("problem size {got} exceeds limit {limit}")]
    SizeExceeded { got: usize, limit: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
