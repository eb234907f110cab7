use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or inconsistent options.
    #[error("config: {0}")]
    Config(String),

    /// Malformed, missing, or inconsistent dataset / checkpoint content.
    #[error("data: {0}")]
    Data(String),

    /// NaN/Inf or a non-finite intermediate during training or evaluation.
    #[error("numeric: {0}")]
    Numeric(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Contract violations of the differentiation engine (double backward etc).
    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Coarse category used by the CLI exit-code taxonomy.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Data(_) | Error::Io { .. } => ErrorKind::Data,
            Error::Numeric(_) | Error::Shape { .. } | Error::Autodiff(_) => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}
