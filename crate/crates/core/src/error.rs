//! Error types shared by every module.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Predictor,
    Input,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Predictor => 2,
            ErrorClass::Input => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported format_version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("singular normal equations (lambda = 0); retry with a positive ridge penalty")]
    Singular,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("instance mismatch: {left} vs {right}")]
    InstanceMismatch { left: String, right: String },

    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Predictor(_) => ErrorClass::Predictor,
            _ => ErrorClass::Input,
        }
    }
}

/// Failures at the black-box predictor boundary.
#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("predictor transport failure: {0}")]
    Transport(String),

    #[error("predictor protocol violation: {0}")]
    Protocol(String),

    #[error("predictor timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("predictor reported an error for request {request_id}: {message}")]
    Reported { request_id: String, message: String },

    #[error("mask length mismatch: {what} has {found} entries, expected {expected}")]
    MaskLength {
        what: &'static str,
        found: usize,
        expected: usize,
    },

    #[error("predictor has no finding {0:?}")]
    UnknownFinding(String),
}
