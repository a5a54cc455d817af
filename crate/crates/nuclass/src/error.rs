//! Error types shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All errors produced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates an invariant. Names the offending field.
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    /// Tensor or frame shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A required precondition does not hold (empty input, bad split, ...).
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// An external tool is missing or failed. Carries the attempted command line.
    #[error("environment error: {reason}; command: {command}")]
    Environment { reason: String, command: String },

    /// The two encodes produced different frame counts.
    #[error("alignment error: raw encode has {raw_frames} frames, compressed encode has {compressed_frames}")]
    Alignment {
        raw_frames: usize,
        compressed_frames: usize,
    },

    /// Manifest checksum does not match its contents.
    #[error("stale manifest: checksum mismatch (expected {expected}, computed {computed})")]
    StaleManifest { expected: String, computed: String },

    /// A parameter exceeds the representable fixed-point range.
    #[error("quantization range error: tensor {tensor}: |{value}| exceeds representable max {max}")]
    QuantRange {
        tensor: String,
        value: f64,
        max: f64,
    },

    /// Training produced a non-finite loss.
    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// A checkpoint file is malformed or inconsistent.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Filesystem/decoding failure with the path involved.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Image decode/encode failure with the path involved.
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// JSON (de)serialization failure.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(reason: impl Into<String>) -> Self {
        Error::Shape(reason.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    /// The CLI maps these to exit status 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::Shape(_)
                | Error::Precondition(_)
                | Error::QuantRange { .. }
        )
    }
}
