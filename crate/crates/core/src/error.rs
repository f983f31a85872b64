use thiserror::Error;

/// Errors raised by a simulator when a planner sends a malformed query or
/// runs past its query budget.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("action index {index} outside 1..={k}")]
    InvalidAction { index: usize, k: usize },
    #[error("state {0} is not a state of this model")]
    InvalidState(String),
    #[error("state {state} at level {level} cannot be queried (horizon {horizon})")]
    BeyondHorizon {
        state: String,
        level: usize,
        horizon: usize,
    },
    #[error("query budget of {budget} exhausted")]
    BudgetExhausted { budget: u64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("stage {stage} has {count} states, above the enumeration cap {cap}")]
    Size { stage: usize, count: usize, cap: usize },

    #[error("vector family generation failed after {retries} retries (worst overlap {worst_overlap:.6}, target {gamma})")]
    Generation {
        retries: usize,
        worst_overlap: f64,
        gamma: f64,
    },

    #[error("design error: {0}")]
    Design(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
