use alloc::string::String;
use core::fmt;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A bank label was referenced that the network does not contain.
    UnknownBank(String),
    /// An exposure from a bank to itself.
    SelfLoop(String),
    /// An exposure amount that is zero, negative or not finite.
    InvalidAmount { lender: String, borrower: String, amount: f64 },
    /// No equity value was supplied for a bank.
    MissingEquity(String),
    /// Equity must be strictly positive.
    NonPositiveEquity { bank: String, equity: f64 },
    /// Vector length did not match the number of banks.
    LengthMismatch { expected: usize, found: usize },
    /// A parameter outside its admissible range.
    InvalidParameter(String),
    /// Fit targets that no model in the ensemble can reproduce.
    InfeasibleTargets(String),
    /// An iterative solver hit its iteration cap.
    NotConverged { what: &'static str, iterations: usize, residual: f64 },
    /// Not enough data for the requested computation.
    Degenerate(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnknownBank(b) => write!(f, "unknown bank `{b}`"),
            Error::SelfLoop(b) => write!(f, "self-loop on bank `{b}`"),
            Error::InvalidAmount { lender, borrower, amount } => {
                write!(f, "invalid exposure {lender} -> {borrower}: {amount}")
            }
            Error::MissingEquity(b) => write!(f, "no equity for bank `{b}`"),
            Error::NonPositiveEquity { bank, equity } => {
                write!(f, "equity of bank `{bank}` must be positive, got {equity}")
            }
            Error::LengthMismatch { expected, found } => {
                write!(f, "expected {expected} values, found {found}")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::InfeasibleTargets(msg) => write!(f, "infeasible targets: {msg}"),
            Error::NotConverged { what, iterations, residual } => {
                write!(f, "{what} did not converge after {iterations} iterations (residual {residual:e})")
            }
            Error::Degenerate(msg) => write!(f, "degenerate input: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
