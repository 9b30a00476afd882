use crate::portfolio::PortfolioSolution;
use thiserror::Error;

/// Errors produced by the estimators, selectors, simulators and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("insufficient data: need at least {required} observations, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("invalid factor count: {0}")]
    InvalidFactorCount(String),

    #[error("residual diagonal entry {index} is not positive ({value})")]
    InvalidResidualDiagonal { index: usize, value: f64 },

    #[error("unknown group {group} (structure has {n_groups} groups)")]
    UnknownGroup { group: usize, n_groups: usize },

    #[error("invalid k_max {k_max}: only {available} eigenvalues available")]
    InvalidKMax { k_max: usize, available: usize },

    #[error("clustering failed: {0}")]
    ClusteringFailed(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("generation failed: {0}")]
    GenerationFailed(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible constraint: gross exposure limit {0} is below 1")]
    InfeasibleConstraint(f64),

    /// The solver hit its iteration cap. The best feasible iterate is attached.
    #[error("solver did not converge after {} iterations", best.iterations)]
    SolverFailed { best: Box<PortfolioSolution> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by the numbers rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::InvalidResidualDiagonal { .. }
                | Error::ClusteringFailed(_)
                | Error::GenerationFailed(_)
                | Error::SolverFailed { .. }
        )
    }
}
