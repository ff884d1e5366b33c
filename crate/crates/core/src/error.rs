//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON; the underlying error carries line/column context.
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("failed to parse {path} at row {row}: {message}")]
    Csv {
        path: String,
        row: usize,
        message: String,
    },

    #[error("class index {class} out of range [0, {n_class}) for task {task}, worker {worker}")]
    ClassOutOfRange {
        task: usize,
        worker: usize,
        class: usize,
        n_class: usize,
    },

    #[error("task index {task} out of range [0, {n_task})")]
    TaskOutOfRange { task: usize, n_task: usize },

    #[error("no tasks: votes object is empty")]
    NoTasks,

    #[error("task {task} has no votes")]
    EmptyAnnotatorSet { task: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Process exit code the CLI maps this error to: 2 for numerical
    /// failures, 1 for everything else (validation, parsing, i/o).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } | Error::Numerical(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
