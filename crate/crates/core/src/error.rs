use thiserror::Error;

/// Errors raised by the model, scheduler, masks and engine.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HpdError {
    /// A model or decode configuration violates its invariants.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),
    /// A position, slot or cache bound was exceeded.
    #[error("capacity error: {0}")]
    Capacity(String),
}

pub type Result<T, E = HpdError> = std::result::Result<T, E>;

macro_rules! contract {
    ($($arg:tt)*) => { $crate::error::HpdError::Contract(format!($($arg)*)) };
}

macro_rules! capacity {
    ($($arg:tt)*) => { $crate::error::HpdError::Capacity(format!($($arg)*)) };
}

pub(crate) use capacity;
pub(crate) use contract;
