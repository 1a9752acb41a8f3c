use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Incompatible shapes, extents or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),
    /// Values outside their legal domain (e.g. a label >= class count).
    #[error("data error: {0}")]
    Data(String),
    /// API misuse, such as calling backward on a non-scalar.
    #[error("usage error: {0}")]
    Usage(String),
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
