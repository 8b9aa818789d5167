use thiserror::Error;

/// Errors shared across the lab. Exit-code mapping for the CLI:
/// precondition failures -> 2, budget refusals -> 3, failed verdicts -> 4.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid alphabet: letter {0} out of range for rank {1}")]
    InvalidAlphabet(i32, u8),
    #[error("rank mismatch: {0} vs {1}")]
    RankMismatch(u8, u8),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("budget exceeded: {0} (required {1})")]
    BudgetExceeded(String, u64),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
