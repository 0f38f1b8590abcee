//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used by every fallible operation in the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two fields that must agree elementwise have different shapes.
    #[error("shape mismatch in {context}: {expected} vs {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A normalization range with `hi <= lo` is degenerate.
    #[error("invalid normalization range: lo={lo}, hi={hi} (need hi > lo)")]
    InvalidRange { lo: f64, hi: f64 },

    /// A configuration value violates a documented precondition.
    #[error("invalid config: {reason}")]
    Config { reason: String },

    /// A source or receiver sits outside the interior grid.
    #[error("invalid acquisition geometry: {reason}")]
    Geometry { reason: String },

    /// Courant number above the explicit-scheme stability bound.
    #[error(
        "unstable configuration: Courant number {courant:.4} > {bound} \
         (c_max={c_max} m/s, dt={dt} s, dx={dx} m)"
    )]
    Unstable {
        c_max: f64,
        dt: f64,
        dx: f64,
        courant: f64,
        bound: f64,
    },

    /// A numeric field picked up NaN or infinity; guards against silent blowup.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// A `.npy` file does not parse as NPY v1.0.
    #[error("malformed npy file {path}: {reason}")]
    NpyFormat { path: PathBuf, reason: String },

    /// The file parses but declares a layout this crate does not handle.
    #[error("unsupported npy file {path}: {reason}")]
    NpyUnsupported { path: PathBuf, reason: String },

    /// A dataset directory is missing one half of a velocity/seismic pair.
    #[error("dataset pairing error: missing counterpart {missing} for {present}")]
    Pairing { present: String, missing: String },

    /// Stored checksum does not match file contents.
    #[error("checksum mismatch for {path}: manifest has {expected}, file hashes to {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    /// Manifest file missing or unparseable.
    #[error("manifest error: {reason}")]
    Manifest { reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(reason: impl Into<String>) -> Self {
        Error::Config {
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
