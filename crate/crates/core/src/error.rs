use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("inconsistent interval between {before} and {after}")]
    InconsistentInterval { before: String, after: String },

    #[error("line {line}: duplicate reading for meter `{meter}` at {timestamp}")]
    DuplicateReading {
        line: u64,
        meter: String,
        timestamp: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("empty dataset after filtering")]
    EmptyAfterFiltering,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series are on different time grids")]
    GridMismatch,

    #[error("undefined correlation: constant sequence")]
    UndefinedCorrelation,

    #[error("insufficient data: {0} usable points, need at least 3")]
    InsufficientData(usize),

    #[error("cluster {0} has no labeled members")]
    UnlabeledCluster(usize),

    #[error("unknown meter `{0}`")]
    UnknownMeter(String),

    #[error("transformer `{0}` has fewer than two meters")]
    SingletonGroup(String),

    #[error("fixed-point voltage solve did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
