use alloc::string::String;

/// Errors raised by tensor operations and the model pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Incompatible extents. The message names both shapes.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A precondition on values or configuration was violated.
    #[error("contract error: {0}")]
    Contract(String),
    /// An operation produced NaN or infinity.
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(alloc::format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(alloc::format!($($arg)*)) };
}
pub(crate) use {contract_err, dim_err};
