use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("map generation failed after {attempts} attempts (density {density}, columns {columns})")]
    GenerationFailed {
        attempts: usize,
        density: f64,
        columns: usize,
    },
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("cell ({row}, {col}) unreachable from ({from_row}, {from_col})")]
    Unreachable {
        from_row: usize,
        from_col: usize,
        row: usize,
        col: usize,
    },
    #[error("belief update removed all probability mass")]
    ZeroMass,
    #[error("infeasible distractor placement: need {needed} eligible cells, found {available}")]
    InfeasiblePlacement { needed: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm in train mode needs at least 2 samples, got {0}")]
    DegenerateBatch(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no samples qualify for condition `{0}`")]
    EmptyCondition(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
