use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("column {column} has zero variance")]
    DegenerateColumn { column: usize },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("training diverged after epoch {last_finite_epoch}")]
    TrainingDiverged { last_finite_epoch: usize },

    #[error("linear system is not positive definite even after jitter")]
    IllConditioned,

    #[error("model has no representation statistics; train it first")]
    UntrainedModel,

    #[error("treatment arm `{0}` is empty")]
    EmptyArm(&'static str),

    #[error("sample draw was degenerate after {attempts} attempts: {reason}")]
    DegenerateDraw { attempts: usize, reason: String },

    #[error("not a model file (bad magic bytes)")]
    BadMagic,

    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("model file checksum mismatch")]
    ChecksumMismatch,

    #[error("model file is truncated")]
    Truncated,

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("{path}: empty file")]
    EmptyFile { path: PathBuf },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}: treatment value {value} is not 0 or 1")]
    NonBinaryTreatment { path: PathBuf, row: usize, value: String },

    #[error("{path}: row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: row {row}: {message}")]
    MalformedCsv {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for input and configuration
    /// problems, 3 for numeric and training failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_)
            | Error::TrainingDiverged { .. }
            | Error::IllConditioned
            | Error::EmptyArm(_)
            | Error::DegenerateDraw { .. }
            | Error::DegenerateColumn { .. } => 3,
            _ => 2,
        }
    }
}
