use std::path::PathBuf;

use crate::model::ModelParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}, column {column}: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("label column `{0}` not found")]
    MissingLabelColumn(String),

    #[error("dataset has {0} distinct label(s); at least 2 are required")]
    TooFewClasses(usize),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid cost vector: {0}")]
    InvalidCosts(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("NaN score encountered")]
    NanScore,

    #[error("model diverged: {0}")]
    Divergence(String),

    #[error("training diverged at epoch {}: {}", .0.epoch, .0.diagnostics)]
    TrainingDiverged(Box<Diverged>),

    #[error("every configuration in the sweep diverged")]
    SweepFailed,
}

/// Last finite parameters and what went wrong, returned when training aborts.
#[derive(Debug)]
pub struct Diverged {
    pub epoch: usize,
    pub checkpoint: ModelParams,
    pub diagnostics: String,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by non-finite numbers during the forward or backward pass.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NanScore | Error::Divergence(_) | Error::TrainingDiverged(_) | Error::SweepFailed
        )
    }
}
