use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("similarity undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("memory for parameter '{parameter}' is untrained (value '{value}' has an all-zero prototype)")]
    UntrainedMemory { parameter: String, value: String },

    #[error("invalid label for parameter '{parameter}': '{value}'")]
    InvalidLabel { parameter: String, value: String },

    #[error("unknown value '{value}' for parameter '{parameter}' (expected one of: {vocabulary})")]
    UnknownValue {
        parameter: String,
        value: String,
        vocabulary: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("embedding '{0}' not found")]
    MissingEmbedding(String),

    #[error("model file: {0}")]
    Model(#[from] ModelFormatError),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("agent contract violation: {0}")]
    ContractViolation(String),

    #[error("agent protocol: {0}")]
    Agent(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Distinct failure codes for model loading.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelFormatError {
    #[error("unsupported format_version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("accumulator for parameter '{parameter}' value '{value}' has length {found}, expected {expected}")]
    AccumulatorLength {
        parameter: String,
        value: String,
        found: usize,
        expected: usize,
    },
}

impl ModelFormatError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::VersionMismatch { .. } => "version_mismatch",
            Self::Malformed(_) => "malformed",
            Self::AccumulatorLength { .. } => "accumulator_length",
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
