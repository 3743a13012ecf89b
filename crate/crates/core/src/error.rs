use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: gap exceeds limit ({missing} missing samples after {after})")]
    GapTooLarge {
        path: PathBuf,
        after: String,
        missing: u64,
    },

    #[error("{path}: data does not cover the simulation grid ({detail})")]
    Coverage { path: PathBuf, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge: {0}")]
    Convergence(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for problems with input files or configuration, as opposed to
    /// failures while planning or simulating.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::GapTooLarge { .. }
            | Error::Coverage { .. }
            | Error::Config(_)
            | Error::IncompatibleGrid(_) => true,
            Error::Context { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
