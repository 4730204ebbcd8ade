use crate::solver::SolveReport;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParameter { field: String, message: String },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("size mismatch: {context} (expected {expected}, got {got})")]
    SizeMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("field violates its Dirichlet data at node {node}: |{got} - {expected}| > tol")]
    Infeasible { node: usize, expected: f64, got: f64 },

    #[error("singular kernel: epsilon = 0 with a degenerate evaluation point and exponent < 2; use epsilon > 0")]
    SingularKernel,

    #[error("factorization failed at pivot {index} (value {pivot:.3e}); the Jacobian is not positive definite — a larger epsilon usually fixes this")]
    SingularJacobian { index: usize, pivot: f64 },

    #[error("solver did not converge within {} iterations (residual {:.3e})", report.iterations, report.final_residual)]
    NonConvergence { report: Box<SolveReport> },

    #[error("governed solve failed during control evaluation: {0}")]
    Control(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn param(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
