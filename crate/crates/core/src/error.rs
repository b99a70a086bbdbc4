use std::path::PathBuf;

use thiserror::Error;

/// Every failure the workbench can report.
///
/// Variants map onto stable machine-readable codes (see [`Error::code`]) which
/// the command-line front end embeds in its error JSON.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("non-finite value in {what} at element {index}")]
    NonFinite { what: String, index: usize },

    #[error("declared payload of {declared} bytes exceeds cap of {cap} bytes")]
    TooLarge { declared: u64, cap: u64 },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch-norm running statistics are uninitialized (no training step has run)")]
    UninitializedStatistics,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("joint enumeration of {states} states exceeds guard of {limit}")]
    EnumerationTooLarge { states: u128, limit: u128 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("manifest validation failed: {0}")]
    Manifest(String),

    #[error("missing unembedding block in activation shard")]
    MissingUnembedding,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated(_) => "truncated",
            Error::NonFinite { .. } => "non_finite",
            Error::TooLarge { .. } => "too_large",
            Error::Malformed(_) => "malformed",
            Error::Dimension(_) => "dimension_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UninitializedStatistics => "uninitialized_statistics",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::EnumerationTooLarge { .. } => "enumeration_too_large",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::Manifest(_) => "manifest",
            Error::MissingUnembedding => "missing_unembedding",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
