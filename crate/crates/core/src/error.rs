use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network shape: n={n}, m={m} (both must be at least 1)")]
    InvalidShape { n: usize, m: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite parameter at index {index}")]
    NonFinite { index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("AUC is undefined when only one class is present")]
    UndefinedAuc,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at iteration {iteration}: non-finite value encountered")]
    Diverged { iteration: usize },

    #[error("dataset still has {0} missing cells; impute before training")]
    MissingValues(usize),

    #[error("{path}: row {row}, column {column} ({name}): {message}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: usize,
        name: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("class {class} has no observed value for feature {feature}")]
    ImputationImpossible { class: u8, feature: String },

    #[error("experiment spec is invalid:\n  - {}", .0.join("\n  - "))]
    InvalidSpec(Vec<String>),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
