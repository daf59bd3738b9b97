//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands have incompatible shapes; both are named.
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// An API was called outside its contract (empty input, bad index,
    /// double backward, ...).
    Usage(String),
    /// A configuration is internally inconsistent or does not match the
    /// task/dataset it is used with.
    Config(String),
    /// Training produced a non-finite loss or gradient.
    Divergence(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Divergence(msg) => write!(f, "divergence: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
