use std::io;

use thiserror::Error;

use crate::learn::Model;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("insufficient history: need {need} samples, have {have}")]
    InsufficientHistory { need: usize, have: usize },

    #[error("lane change rejected: {0}")]
    ManeuverRejected(String),

    /// Training produced a non-finite loss. Carries the parameters from the
    /// last epoch that finished with a finite validation loss.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize, last: Box<Model> },

    #[error("embedding fit failed: {0}")]
    FitFailed(String),

    #[error("style head has zero gradient")]
    DegenerateStyleHead,

    #[error("training embeddings do not span the perpendicular plane")]
    InsufficientSpread,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
