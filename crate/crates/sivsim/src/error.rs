use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Analysis routines return structured variants so
/// callers (CLI, tests) can react without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no peak above 3 sigma of baseline noise: {0}")]
    NoPeak(String),

    #[error("peak seeding found {} of {expected} requested peaks (at {found:?})", found.len())]
    PeakSeeding { expected: usize, found: Vec<f64> },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("normalization failed: {0}")]
    Normalization(String),

    #[error("empty or single-channel stream: {0}")]
    EmptyStream(String),

    #[error("value out of model range: {0}")]
    OutOfRange(String),

    #[error("config schema violation: {0}")]
    Schema(String),

    #[error("could not parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("content hash mismatch for {path} (expected {expected}, found {found})")]
    Corrupt {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {found} in {path} (this build reads {supported})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
