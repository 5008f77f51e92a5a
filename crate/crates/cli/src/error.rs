use std::path::PathBuf;

use subsort_core::ErrorKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] subsort_core::Error),

    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 = input error, 3 = degenerate model, 4 = I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Degeneracy => 3,
                ErrorKind::Io => 4,
            },
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Io { .. } => 4,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
