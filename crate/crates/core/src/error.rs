use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum NitError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance of the pooled data is singular: continuous column {column} has zero variance")]
    SingularCovariance { column: usize },

    #[error("constraint set is infeasible: {0}")]
    Infeasible(String),

    #[error(
        "solver did not converge in {iterations} iterations \
         (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e})"
    )]
    NotConverged {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        best: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("every bandwidth in the grid failed ({} failures)", failures.len())]
    NoUsableBandwidth { failures: Vec<(f64, String)> },
}

pub type Result<T> = std::result::Result<T, NitError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(NitError::InvalidInput(msg.into()))
}
