use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("division by zero in {0}")]
    ZeroDivisor(&'static str),

    #[error("infeasible offload: transmission time {tx_time} s >= slot length {t_max} s")]
    Infeasible { tx_time: f64, t_max: f64 },

    #[error("episode already finished: t = {t}, horizon = {horizon}")]
    PastHorizon { t: usize, horizon: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("buffer holds {len} transitions, batch needs {needed}")]
    NotEnoughSamples { len: usize, needed: usize },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
