use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotoneTimestamps { row: usize },

    #[error("empty recording")]
    EmptyRecording,

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("duplicate manifest key {0}")]
    DuplicateKey(String),

    #[error("unparseable file name `{0}`")]
    UnparseableName(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("recording too short: need {needed} samples, have {available}")]
    TooShort { needed: usize, available: usize },

    #[error("channel `{0}` has zero variance")]
    ZeroVariance(&'static str),

    #[error("unsupported target rate {0} Hz")]
    UnsupportedRate(f64),

    #[error("pool cannot satisfy minibatch composition: {0}")]
    Composition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },

    #[error("backward called without a train-mode forward cache")]
    MissingCache,

    #[error("missing prerequisite {0}; run the earlier stage first")]
    MissingArtifact(PathBuf),

    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("infeasible moments: {0}")]
    InfeasibleMoments(String),

    #[error("no genuine pairs available in any validation round")]
    NoGenuinePairs,

    #[error("iteration {0} outside search schedule")]
    ScheduleRange(usize),

    #[error("covariance matrix not positive definite after jitter escalation")]
    Covariance,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-parsable code for the last line of CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::MalformedRow { .. } => "E_MALFORMED_ROW",
            Error::NonMonotoneTimestamps { .. } => "E_NON_MONOTONE",
            Error::EmptyRecording => "E_EMPTY",
            Error::MissingColumn(_) => "E_MISSING_COLUMN",
            Error::DuplicateKey(_) => "E_DUPLICATE_KEY",
            Error::UnparseableName(_) => "E_BAD_NAME",
            Error::InvalidInput(_) => "E_INVALID",
            Error::TooShort { .. } => "E_TOO_SHORT",
            Error::ZeroVariance(_) => "E_ZERO_VARIANCE",
            Error::UnsupportedRate(_) => "E_RATE",
            Error::Composition(_) => "E_COMPOSITION",
            Error::Config(_) => "E_CONFIG",
            Error::NonFinite { .. } => "E_NON_FINITE",
            Error::MissingCache => "E_MISSING_CACHE",
            Error::MissingArtifact(_) => "E_MISSING_ARTIFACT",
            Error::Version { .. } => "E_VERSION",
            Error::Checksum => "E_CHECKSUM",
            Error::InfeasibleMoments(_) => "E_MOMENTS",
            Error::NoGenuinePairs => "E_NO_GENUINE",
            Error::ScheduleRange(_) => "E_SCHEDULE",
            Error::Covariance => "E_COVARIANCE",
            Error::Csv(_) => "E_CSV",
        }
    }
}
