use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("node {0} is not part of this graph")]
    UnknownNode(usize),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("dataset must contain both classes (positives = {positives}, negatives = {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error("classifier has not been trained")]
    Untrained,

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("scene is infeasible after {0} rejections")]
    Infeasible(usize),

    #[error("unknown record id {0}")]
    UnknownRecord(String),

    #[error("{path}:{line}: {msg}")]
    Corrupt { path: PathBuf, line: usize, msg: String },

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("png encoding: {0}")]
    Png(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
