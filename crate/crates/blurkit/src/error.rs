//! Crate-wide error type.
//!
//! Errors are split into two broad classes that the CLI maps onto exit
//! codes: configuration/validation problems (bad inputs, shape mismatches,
//! invalid intervals — exit code 2) and runtime failures (I/O, corrupt
//! files, non-finite losses — exit code 1).

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside its documented domain (e.g. pixel not in [0,1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// Exposure window not fully covered by the provided fine samples.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// Window boundaries do not align to the fine sample grid.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Inconsistent or invalid configuration / parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or image shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Operation requested without the prerequisite hook or capability.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Clip ingestion failed; carries the offending files.
    #[error("ingestion error: {msg}; offending files: {files:?}")]
    Ingestion { msg: String, files: Vec<PathBuf> },

    /// Checkpoint format version mismatch.
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    /// Corrupt or truncated file contents.
    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    /// Training diverged (non-finite loss).
    #[error("non-finite loss at step {step}: {details}")]
    NonFiniteLoss { step: u64, details: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// True for errors caused by bad inputs/configuration rather than by
    /// the environment failing at runtime. The CLI reports these as exit
    /// code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Coverage(_)
                | Error::Alignment(_)
                | Error::Config(_)
                | Error::Shape(_)
                | Error::Unsupported(_)
                | Error::Version { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
