use thiserror::Error;

/// Errors raised by the pricing library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("LP solver failed: {0}")]
    Solver(String),

    #[error("no equivalent martingale measure: the market admits arbitrage")]
    NoMartingaleMeasure,

    #[error("claim {0} is replicable by cash and stocks")]
    ReplicableClaim(usize),

    #[error("utility maximization is unbounded")]
    Unbounded,

    #[error("cutting-plane certification did not close: {0}")]
    Precision(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e.to_string()))
    }
}
