use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("capacity error: requested {requested} pairs but only {available} are available ({what})")]
    Capacity {
        what: String,
        requested: usize,
        available: usize,
    },

    #[error("format error in {file} at row {row}: {message}")]
    Format {
        file: String,
        row: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("non-finite loss at epoch {epoch}, step {step} (batch {batch_id}); dump written to {dump}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch_id: String,
        dump: PathBuf,
    },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("degenerate probe task {task}: training labels contain a single class")]
    DegenerateTask { task: String },

    #[error("{failed} of {total} sub-runs failed")]
    SubRunFailures { failed: usize, total: usize },

    #[error("nothing to plot in {0}")]
    NothingToPlot(PathBuf),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Capacity { .. }
            | Error::Format { .. }
            | Error::Config(_)
            | Error::DegenerateTask { .. }
            | Error::Checkpoint(_) => 2,
            Error::SubRunFailures { .. } | Error::NonFiniteLoss { .. } | Error::NonFinite(_) => 3,
            Error::Io { .. } | Error::Image { .. } | Error::NothingToPlot(_) => 4,
            Error::Json(_) => 2,
            Error::Tensor(_) => 3,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
