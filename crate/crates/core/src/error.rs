use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{file}: unknown column `{column}`")]
    UnknownColumn { file: String, column: String },

    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: String, column: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("column mismatch: {0}")]
    ColumnMismatch(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("dataset has a single class; both labels are required")]
    SingleClass,

    #[error("need at least {needed} minority rows, found {found}")]
    TooFewMinority { needed: usize, found: usize },

    #[error("k = {k} exceeds the {n} available rows")]
    KTooLarge { k: usize, n: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
