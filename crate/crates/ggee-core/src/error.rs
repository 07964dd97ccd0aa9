//! Error type shared across the crate.

use alloc::string::String;

/// Errors surfaced by estimation, grouping, selection, and simulation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(&'static str),
    /// A parameter lies outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A caller-side contract was violated (dimension mismatch, bad sizes, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Numerical failure (factorization breakdown, divergence).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A group referenced by the operation has no members.
    #[error("group {0} has no members")]
    EmptyGroup(usize),
}

pub type Result<T> = core::result::Result<T, Error>;
