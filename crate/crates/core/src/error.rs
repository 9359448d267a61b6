use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{} label(s) not in the vocabulary: {}", .labels.len(), .labels.join(", "))]
    UnknownLabels { labels: Vec<String> },

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("{0} split is empty")]
    EmptySplit(&'static str),

    #[error("need at least 2 entities to corrupt a triple, have {0}")]
    TooFewEntities(usize),

    #[error("entity {entity} has a zero-norm embedding")]
    ZeroNorm { entity: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unsupported checkpoint header {0:?}")]
    CheckpointVersion(String),

    #[error("checkpoint line {line}: {message}")]
    CheckpointRow { line: usize, message: String },

    #[error("checkpoint truncated: expected {expected} rows, found {found}")]
    CheckpointTruncated { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used to map failures to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::TooFewEntities(_) => ErrorKind::Config,
            Error::ZeroNorm { .. } | Error::NonFinite(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
