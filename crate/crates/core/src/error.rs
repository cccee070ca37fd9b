use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by mesh construction, coefficient ingestion and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("index error: {what} {index} out of range (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("{path}:{line}: {msg}")]
    Ingest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("solver error in {context}: {detail}")]
    Solver { context: String, detail: String },

    #[error("eigensolver error on element {element}: {detail}")]
    Eigen { element: usize, detail: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn solver(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Solver {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
