use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// The variants map onto the CLI exit-code classes: `Parse`, `Io`, `Data` and
/// `Inference` are data errors, `Numerical` is a numerical fault, the rest are
/// usage or configuration errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error class: 1 usage/config, 2 data,
    /// 3 numerical fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::Shape(_) => 1,
            Error::Parse { .. } | Error::Io { .. } | Error::Inference(_) | Error::Data(_) | Error::Checkpoint(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
