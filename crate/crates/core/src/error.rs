use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot build operator for {from}->{to}: {reason}")]
    OperatorConstruction { from: usize, to: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model state: {0}")]
    State(String),

    #[error("ingestion failed for {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("checkpoint load failed at field `{field}`: {reason}")]
    Checkpoint { field: String, reason: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
