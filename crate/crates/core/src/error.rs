use thiserror::Error;

/// Errors produced by the analytic pipeline and the Monte Carlo harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a precondition (wrong shape, not Hermitian, index out
    /// of range, malformed expression, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A fixed-point iteration did not reach its tolerance. Carries the final
    /// residual and a context string naming the transform (and, once bubbled
    /// through compilation, the expression subtree).
    #[error("convergence failure in {context}: residual {residual:.3e} after {iterations} iterations")]
    Convergence {
        context: String,
        residual: f64,
        iterations: usize,
    },

    /// A matrix that must be invertible was singular, or a value left the
    /// numeric domain (NaN/Inf).
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Prefix the context of a convergence error with an expression path such
    /// as `term[1].factor[0]`.
    pub fn with_path(self, path: &str) -> Self {
        match self {
            Error::Convergence {
                context,
                residual,
                iterations,
            } => Error::Convergence {
                context: format!("{path}: {context}"),
                residual,
                iterations,
            },
            other => other,
        }
    }
}
