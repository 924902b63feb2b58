use thiserror::Error;

#[derive(Debug, Error)]
pub enum PagarError {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid reward: {0}")]
    InvalidReward(String),
    #[error("invalid demonstrations: {0}")]
    InvalidDemos(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("gamma = 1 needs a finite horizon")]
    UndiscountedInfinite,
    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("parameters {params:?} outside the box")]
    OutOfBox { params: Vec<f64> },
    #[error("enumeration guard: {0}")]
    Guard(String),
    #[error("empty acceptance set on the policy grid")]
    EmptyAcceptance,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, PagarError>;
