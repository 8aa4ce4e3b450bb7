use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed record at line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("dimension mismatch at line {line}: expected {expected}, found {found}")]
    DatasetDimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { line: usize, id: String },

    #[error("non-finite component in {field} at line {line}")]
    NonFinite { line: usize, field: &'static str },

    #[error("lu_id {lu_id:?} maps to lemmas {first:?} and {second:?}")]
    InconsistentLu {
        lu_id: String,
        first: String,
        second: String,
    },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("vector norm {norm:e} is too small to normalize")]
    DegenerateVector { norm: f64 },

    #[error("combination weight {0} outside [0, 1]")]
    InvalidWeight(f64),

    #[error("need at least {needed} lemmas to split, found {found}")]
    TooFewLemmas { needed: usize, found: usize },

    #[error("need at least 2 frames, found {0}")]
    TooFewFrames(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("instance sets differ: {0}")]
    InstanceMismatch(String),

    #[error("no other instance of frame {frame:?} in the {space} search space")]
    NoTrueInstances { frame: String, space: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

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

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool: 3 for numerical
    /// failures, 2 for everything else (bad input, missing files).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateVector { .. } | Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
