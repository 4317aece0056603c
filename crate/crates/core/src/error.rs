use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {node} lies outside [-1, 1]^d: {point:?}")]
    OutsideDomain { node: usize, point: Vec<f64> },

    #[error("quadrature rule would have {predicted} nodes, above the cap of {cap}")]
    TooManyNodes { predicted: u64, cap: u64 },

    #[error("non-finite integrand value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },

    /// The exponent `sum_k lambda_k c_k(x)` exceeded the overflow guard.
    #[error("exponent {exponent:.3} at node {node} exceeds the overflow guard")]
    ExponentOverflow { node: usize, exponent: f64 },

    #[error("singular matrix (pivot ratio {pivot_ratio:.3e})")]
    SingularMatrix { pivot_ratio: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("derivative {value:.3e} is too close to zero")]
    ZeroDerivative { value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("axis {axis} is constant across all samples")]
    DegenerateAxis { axis: usize },

    #[error("io: {0}")]
    Io(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
