use thiserror::Error;

use crate::equilibrium::EquilibriumResult;

#[derive(Debug, Error)]
pub enum ApqError {
    #[error("model is unstable: total load rho = {rho} (must be < 1)")]
    Unstable { rho: f64 },

    #[error("invalid class {index}: {reason}")]
    InvalidClass { index: usize, reason: String },

    #[error("the model has no classes")]
    EmptyModel,

    #[error("bid {bid} at position {index} is not strictly positive and finite")]
    NonPositiveBid { index: usize, bid: f64 },

    #[error("bid profile has {got} entries but the model has {expected} classes")]
    ProfileLength { expected: usize, got: usize },

    #[error("invalid mixture for class {class}: {reason}")]
    InvalidMixture { class: usize, reason: String },

    #[error("bid profile is not in ascending order at position {index}")]
    UnorderedProfile { index: usize },

    #[error("class costs differ; the closed-form equilibrium needs one common cost")]
    HeterogeneousCosts,

    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },

    #[error("invalid scaling: {0}")]
    InvalidScale(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no customer is waiting")]
    EmptyQueue,

    #[error(
        "best-response iteration did not converge (residual {:.3e} after {} sweeps)",
        .0.residual,
        .0.iterations
    )]
    NoConvergence(Box<EquilibriumResult>),

    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T, E = ApqError> = std::result::Result<T, E>;
