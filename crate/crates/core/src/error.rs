use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The closed-form prox needs `lo <= 0 <= hi` on every coordinate.
    #[error("unsupported box at coordinate {index}: [{lo}, {hi}] does not contain 0")]
    UnsupportedBox { index: usize, lo: f64, hi: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("feedback mismatch: algorithm expected {expected} feedback, got {got}")]
    FeedbackMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("infeasible load: {0}")]
    InfeasibleLoad(String),

    #[error("sampling failure: {0}")]
    SamplingFailure(String),

    #[error("invalid parameter ranges: {0}")]
    InvalidRanges(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("round {round}: {source}")]
    AtRound { round: usize, source: Box<Error> },
}

impl Error {
    pub fn at_round(self, round: usize) -> Self {
        match self {
            Error::AtRound { .. } => self,
            other => Error::AtRound {
                round,
                source: Box::new(other),
            },
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
