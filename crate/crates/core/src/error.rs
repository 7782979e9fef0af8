use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown dataset reader {0:?}")]
    UnknownDataset(String),
    #[error("unreadable source files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    CorruptFiles(Vec<PathBuf>),
    #[error("sample rate {0} Hz is below 50 Hz (upsampling refused)")]
    RateTooLow(f64),
    #[error("channel {channel} of dataset {dataset:?} has zero variance")]
    ZeroVariance { dataset: String, channel: usize },
    #[error("recordings from several datasets passed to a per-dataset step: {0:?}")]
    MixedDatasets(Vec<String>),
    #[error("label {label:?} maps to both {first} and {second}")]
    AliasConflict { label: String, first: String, second: String },
    #[error("invalid generator spec: {0}")]
    InvalidSynthSpec(String),
    #[error("{have} subjects cannot fill {need} non-empty partitions")]
    TooFewSubjects { have: usize, need: usize },
    #[error("fractions must sum to 1 (got {0})")]
    BadFractions(f64),
    #[error("dataset {0:?} is not in the corpus")]
    MissingDataset(String),
    #[error("class {0} has no windows")]
    EmptyClass(u8),
    #[error("scenario {0} has no training windows")]
    EmptyScenario(String),
    #[error("degenerate mask: {visible} visible of {n_tokens} tokens")]
    DegenerateMask { n_tokens: usize, visible: usize },
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("representation collapse: target spread {0:.3e} stayed below threshold")]
    Collapse(f64),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("mixed experiment cells: {0}")]
    MixedCells(String),
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}
