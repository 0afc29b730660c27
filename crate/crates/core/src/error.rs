use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph is not chordal; triangulate it before enumerating cliques")]
    NotChordal,

    #[error("no feasible threshold: attribute `{attribute}` value `{value}` occurs in the test rows but never in the training rows")]
    Infeasible { attribute: String, value: String },

    #[error("no feasible threshold: {0}")]
    NoFeasibleThreshold(String),

    #[error("enumeration cap exceeded: {size} assignments > cap {cap}")]
    CapExceeded { size: u128, cap: u128 },

    #[error("model file error: {0}")]
    Schema(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible { .. } | Error::NoFeasibleThreshold(_) => 3,
            Error::Internal(_) | Error::NotChordal => 4,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
