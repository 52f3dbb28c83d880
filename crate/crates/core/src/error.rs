use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("too many malformed rows: {skipped} of {total} skipped")]
    TooManyMalformed { skipped: usize, total: usize },

    #[error("need at least {needed} check-ins to form train/val/test splits, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (last good epoch: {last_good_epoch:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        last_good_epoch: Option<usize>,
    },

    #[error("checkpoint fingerprint {found} does not match configuration fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("infeasible synthetic world: {0}")]
    InfeasibleSpec(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Config(_)
            | Error::TooManyMalformed { .. }
            | Error::TooFewRecords { .. }
            | Error::Format { .. } => 2,
            Error::NonFiniteLoss { .. } => 3,
            Error::FingerprintMismatch { .. } => 4,
            Error::InfeasibleSpec(_) => 5,
            _ => 1,
        }
    }
}
