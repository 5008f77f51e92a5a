use std::path::PathBuf;

use thiserror::Error;

use crate::io::mrc::MrcError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Degeneracy,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    /// A caller broke an API precondition (shape mismatch, non-finite parameter).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate model{}: {reason}", component_suffix(*.component))]
    Degenerate {
        component: Option<usize>,
        reason: String,
    },

    /// The effective sample count of a component fell below the configured threshold.
    #[error("component {component} collapsed (effective count {effective_count:.3e})")]
    ComponentCollapsed {
        component: usize,
        effective_count: f64,
    },

    #[error(transparent)]
    Mrc(#[from] MrcError),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn component_suffix(component: Option<usize>) -> String {
    match component {
        Some(m) => format!(" (component {m})"),
        None => String::new(),
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Input(_) | Error::Contract(_) | Error::Parse { .. } => ErrorKind::Input,
            Error::Degenerate { .. } | Error::ComponentCollapsed { .. } => ErrorKind::Degeneracy,
            Error::Io { .. } => ErrorKind::Io,
            Error::Mrc(e) => match e {
                MrcError::Io { .. } => ErrorKind::Io,
                _ => ErrorKind::Input,
            },
        }
    }

    pub(crate) fn degenerate(component: Option<usize>, reason: impl Into<String>) -> Self {
        Error::Degenerate {
            component,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a component index to a degeneracy error that lacks one.
    pub(crate) fn at_component(self, m: usize) -> Self {
        match self {
            Error::Degenerate {
                component: None,
                reason,
            } => Error::Degenerate {
                component: Some(m),
                reason,
            },
            other => other,
        }
    }
}
