use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: schema error: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("edit set invalid: {0}")]
    InvalidEdits(String),

    #[error("level mismatch: hypothesis is {hypothesis}, reference is {reference}")]
    LevelMismatch {
        hypothesis: crate::edits::Level,
        reference: crate::edits::Level,
    },

    #[error("dimension mismatch: model has {model}, features have {features}")]
    DimMismatch { model: usize, features: usize },

    #[error("degenerate label set: {0}")]
    DegenerateLabels(String),

    #[error("corrector {name} failed: {message}")]
    Corrector { name: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("remote corrector failure budget exceeded: {failed} failed queries, budget {budget}")]
    FailureBudget { failed: usize, budget: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line harness.
    ///
    /// 1 usage/config, 2 data, 3 remote-corrector failure budget exceeded.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::FailureBudget { .. } => 3,
            _ => 2,
        }
    }
}
