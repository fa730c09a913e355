//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors raised by construction and fitting routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input (non-finite values, unordered grids, bad shapes).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two objects that must share sampling grids do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// An operation received fewer observations than it requires.
    #[error("not enough data: {0}")]
    NotEnoughData(String),

    /// A numerical routine failed (factorization, degenerate system).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
