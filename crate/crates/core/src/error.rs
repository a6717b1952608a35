use thiserror::Error;

/// Errors surfaced by the numerical and simulation layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("adaptive quadrature did not converge on [{a}, {b}] (tol {tol:e}, max depth {max_depth})")]
    QuadratureNonConvergence {
        a: f64,
        b: f64,
        tol: f64,
        max_depth: u32,
    },

    #[error("operation requires a differentiable test function, got `{0}`")]
    MissingDerivative(String),

    #[error("orthogonality loss in basis construction: max usable order is {max_usable} (requested {requested})")]
    OrthogonalityLoss { max_usable: usize, requested: usize },

    #[error("workload diffusion requires a finite second moment of the service law")]
    InfiniteSecondMoment,

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
