use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 usage/configuration, 3 data and I/O, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }

    /// Short machine-readable tag printed ahead of the message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "E_CONFIG",
            Error::Usage(_) => "E_USAGE",
            Error::Data(_) => "E_DATA",
            Error::Io { .. } => "E_IO",
            Error::Numerical(_) => "E_NUMERICAL",
        }
    }
}

impl From<orthoseg_tensor::Error> for Error {
    fn from(e: orthoseg_tensor::Error) -> Self {
        match e {
            orthoseg_tensor::Error::Config(m) => Error::Config(m),
            orthoseg_tensor::Error::Data(m) => Error::Data(m),
            orthoseg_tensor::Error::Usage(m) => Error::Usage(m),
        }
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::Error::Data(format!($($arg)*)) };
}
pub(crate) use {config_err, data_err};
