use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("order book state: {0}")]
    BookState(String),

    #[error("degenerate run: {0}")]
    DegenerateRun(String),

    #[error("threshold {q} produced {exceedances} exceedance(s); at least 2 are needed")]
    EmptyIntervals { q: f64, exceedances: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("malformed input in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
