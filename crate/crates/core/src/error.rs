use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("follower regions overlap: {0}")]
    Overlap(String),
    #[error("containment violated: {0}")]
    Containment(String),
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("region is not part of the geometry: {0}")]
    UnknownRegion(String),

    #[error("time {t} outside [0, {t_final}]")]
    OutOfRange { t: f64, t_final: f64 },
    #[error("motion matrix is not invertible (|det M| = {0:e})")]
    NonInvertible(f64),
    #[error("invalid motion law: {0}")]
    InvalidMotion(String),
    #[error("finite-difference step {0:e} exceeds 1e-2")]
    StepTooLarge(f64),

    #[error("size {0} outside the supported range")]
    Size(usize),
    #[error("quadrature order {order} below N+2 = {min}")]
    QuadratureOrder { order: usize, min: usize },

    #[error("step matrix at step {step} is numerically singular (condition estimate {cond:e})")]
    SingularStep { step: usize, cond: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("operator is not positive definite: curvature {curvature:e} at iteration {iteration}")]
    IndefiniteOperator { iteration: usize, curvature: f64 },
    #[error("{solver} did not converge in {iterations} iterations (relative residual {residual:e})")]
    MaxIterations {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("coupled leader system did not converge; residual history {history:?}")]
    NoConvergence { history: Vec<f64> },
    #[error("power iteration stalled after {iterations} iterations (relative change {change:e})")]
    PowerIterationStall { iterations: usize, change: f64 },

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("expression parse error: {0}")]
    Expr(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
