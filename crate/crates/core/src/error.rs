use alloc::string::String;

/// Errors raised by the estimation and simulation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid parameters or configuration (unstable queue, bad grid, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Argument outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),
    /// A numerical routine failed or produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! numeric_err {
    ($($arg:tt)*) => { $crate::Error::Numeric(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use numeric_err;
