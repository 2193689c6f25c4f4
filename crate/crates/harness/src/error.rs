use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("csv {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] vaelens::Error),
    /// Some jobs of a sweep failed; their outputs were skipped.
    #[error("{failed} of {total} jobs failed")]
    Partial { failed: usize, total: usize },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// 0 success, 1 usage, 2 data/IO, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use vaelens::Error as E;
        match self {
            HarnessError::Usage(_) | HarnessError::Config(_) => 1,
            HarnessError::Io { .. } | HarnessError::Checkpoint(_) | HarnessError::Csv { .. } => 2,
            HarnessError::Partial { .. } => 3,
            HarnessError::Core(e) => match e {
                E::InvalidParameter(_) => 1,
                E::Io(_) | E::Format(_) | E::Length(_) | E::Shape(_) | E::InvalidInput(_) | E::Domain(_) => 2,
                _ => 3,
            },
        }
    }
}
