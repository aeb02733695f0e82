use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty evaluation set")]
    EmptySet,

    #[error("label error: {0}")]
    Label(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {what}")]
    Divergence {
        epoch: usize,
        batch: usize,
        what: String,
    },

    #[error("exhaustive search needs {required} combinations, budget cap is {cap}")]
    BudgetExceeded { required: u128, cap: u128 },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("ingestion error in {path}: {what}")]
    Ingest { path: PathBuf, what: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
