//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Error`]. The CLI maps each
//! variant to a stable machine-parsable kind tag via [`Error::kind`].

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },

    #[error("{what}: empty input")]
    EmptyInput { what: &'static str },

    #[error("{what}: index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid class label {0} (expected 0..3)")]
    InvalidLabel(usize),

    #[error("annotation flag set is empty")]
    EmptyFlagSet,

    #[error("class {0} has zero count; class weights undefined")]
    ZeroClassCount(usize),

    #[error("need at least {min} records to split, got {n}")]
    TooFewRecords { n: usize, min: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes (not an arvsu file of the expected kind)")]
    BadMagic,

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("checksum mismatch (file corrupted)")]
    ChecksumMismatch,

    #[error("model config digest mismatch (config block corrupted)")]
    ConfigDigestMismatch,

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Stable one-token kind tag used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::BadShape { .. } => "shape",
            Error::EmptyInput { .. } => "empty-input",
            Error::IndexOutOfRange { .. } => "index-range",
            Error::InvalidConfig(_) => "config",
            Error::InvalidLabel(_) => "label",
            Error::EmptyFlagSet => "empty-flags",
            Error::ZeroClassCount(_) => "zero-class",
            Error::TooFewRecords { .. } => "too-few-records",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::BadMagic => "bad-magic",
            Error::UnsupportedVersion { .. } => "version",
            Error::Truncated(_) => "truncated",
            Error::ChecksumMismatch => "checksum",
            Error::ConfigDigestMismatch => "config-digest",
            Error::ConfigMismatch(_) => "config-mismatch",
            Error::MissingGradient(_) => "missing-grad",
            Error::Usage(_) => "usage",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
