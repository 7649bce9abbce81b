use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid medium specification: {0}")]
    InvalidEnv(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid periodization parameter: {0}")]
    InvalidPeriodization(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),

    #[error("CFL violation: dt = {dt:e} exceeds stable bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("monotone stencil infeasible at node {node}: {reason}")]
    StencilInfeasible { node: usize, reason: String },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("bracket failure: {0}")]
    Bracket(String),

    #[error("internal consistency check failed: {0}")]
    Verification(String),

    #[error("rate fit: {0}")]
    RateFit(String),

    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
