//! Crate-wide error taxonomy.
//!
//! Contract violations (dimension mismatches, stale anchors, invalid
//! configuration) are reported through typed variants so callers and tests can
//! distinguish them from genuine numerical failures such as solver divergence
//! or a failed Cholesky factorization.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced while decoding a federation message.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    /// The 4-byte magic did not match.
    #[error("bad magic in field `magic`: expected \"FTLM\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    /// The version field is not one this build understands.
    #[error("unsupported version in field `version`: {found}")]
    UnsupportedVersion { found: u16 },
    /// The message-type byte is not a known discriminant.
    #[error("unknown message type in field `msg_type`: {found}")]
    UnknownMessageType { found: u8 },
    /// The buffer ended before the named field was complete.
    #[error("truncated message: field `{field}` needs {needed} bytes, {available} available")]
    Truncated {
        field: &'static str,
        needed: usize,
        available: usize,
    },
    /// The payload length disagrees with the dimension in the header.
    #[error(
        "payload length mismatch in field `payload`: header implies {expected} bytes, found {found}"
    )]
    PayloadLength { expected: usize, found: usize },
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two related quantities disagree.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    /// An operation that needs at least one row received none.
    #[error("empty row subset in {context}")]
    EmptySubset { context: String },

    /// Outcome vector invalid for the requested family.
    #[error("invalid outcome for logistic family at row {row}: {value} (must be 0 or 1)")]
    InvalidOutcome { row: usize, value: f64 },

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// The solver produced a non-finite objective or gradient.
    #[error("solver diverged after {iterations} iterations: {context}")]
    SolverDiverged { iterations: usize, context: String },

    /// A caller broke an interface contract (stale anchor, missing population,
    /// mismatched site/population ids, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Wire-format decoding failed.
    #[error("message decode failed: {0}")]
    Codec(#[from] CodecError),

    /// A configuration field has an invalid value.  The message names the
    /// offending field.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Cross-validation could not form usable folds.
    #[error("cross-validation failed: {0}")]
    CrossValidation(String),

    /// Covariance factorization failed (matrix not positive definite).
    #[error("Cholesky factorization failed at pivot {pivot}: matrix is not positive definite")]
    CholeskyFailure { pivot: usize },

    /// A metric is undefined on the given inputs (for example AUC with a
    /// single class).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// Filesystem or serialization failure while reading/writing artifacts.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Helper for dimension checks.
    pub fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    /// Helper for contract violations.
    pub fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }

    /// Helper for config validation failures.
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Helper wrapping an io error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Helper wrapping a JSON error with the document it occurred in.
    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
