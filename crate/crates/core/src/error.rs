use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("example {id}: zero-norm embedding cannot be normalized")]
    ZeroVector { id: String },

    #[error("duplicate example id {id}")]
    DuplicateId { id: String },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("class {class} has no examples and cannot be stratified")]
    ClassAbsent { class: usize },

    #[error("training set is empty")]
    EmptyTraining,

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("no training points of class {class}")]
    EmptyClass { class: usize },

    #[error("no training points outside class {class}")]
    NoOtherClass { class: usize },

    #[error("example {id}: {source}")]
    Scoring {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("id {id} appears in both the training and calibration sets")]
    Leakage { id: String },

    #[error("calibration table fingerprint {table} does not match index fingerprint {index}")]
    FingerprintMismatch { table: String, index: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("epsilon {0} must lie strictly between 0 and 1")]
    InvalidEpsilon(f64),

    #[error("invalid epsilon grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing configuration key {0}")]
    MissingKey(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the environment rather than of the input data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Scoring { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
