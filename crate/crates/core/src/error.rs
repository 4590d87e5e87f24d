use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution spec violates one of its construction invariants.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// An argument lies outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Exact enumeration would visit more tuples than allowed.
    #[error("enumeration budget exceeded: {needed} multisets > budget {budget}; use Monte Carlo instead")]
    BudgetExceeded { needed: u128, budget: u128 },

    /// Fewer positive values than order statistics requested.
    #[error("not enough tail data: {positive} positive values, {k} requested")]
    NotEnoughTailData { positive: usize, k: usize },

    /// A survival function that increases somewhere.
    #[error("invalid survival curve: {0}")]
    InvalidSurvival(String),

    /// The operation is not defined for this kind of distribution.
    #[error("condition inapplicable: {0}")]
    Inapplicable(String),

    /// The classifier certified that the requested moment diverges.
    #[error("divergent target: {0}")]
    Divergent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
