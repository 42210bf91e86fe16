use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("weather gap of {hours} hours before {at} exceeds the fill limit of {limit}")]
    WeatherGap { at: String, hours: i64, limit: i64 },

    #[error("stage-1 forecast missing for station {station} at hour {hour}")]
    MissingStage1Coverage { station: String, hour: usize },

    #[error("unknown station `{0}` (enable zero-shot substitution to forecast unseen stations)")]
    UnknownStation(String),

    #[error("training window reaches index {index} but the training split ends at {train_end}")]
    Leakage { index: usize, train_end: usize },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: msg.into(),
        }
    }
}
