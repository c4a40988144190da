use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains no data rows")]
    EmptyInput,

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("state set or state does not belong to this support")]
    DomainMismatch,

    #[error("score function does not cover states {missing:?}")]
    Coverage { missing: Vec<usize> },

    #[error("conflicting score rows for state {key}")]
    ScoreConflict { key: String },

    #[error("watermarked distribution puts mass on state {state} outside the base support")]
    AbsoluteContinuity { state: usize },

    #[error("infeasible error rates: alpha = {alpha} must satisfy 0 < alpha <= 1 - beta (beta = {beta})")]
    Infeasible { alpha: f64, beta: f64 },

    #[error("detection region has zero base mass; nothing can be watermarked")]
    Undetectable,

    #[error("detection region covers the whole support (alpha = 1)")]
    DegenerateRegion,

    #[error("reward coefficient is infinite for alpha = {alpha}, beta = {beta}; use the rejection sampler (`embed`) instead")]
    DegenerateReward { alpha: f64, beta: f64 },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid f-generator `{name}`: {reason}")]
    InvalidGenerator { name: String, reason: String },

    #[error("proposal budget of {budget} exceeded before a sample was accepted")]
    BudgetExceeded { budget: u64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
