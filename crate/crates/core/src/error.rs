use thiserror::Error;

/// Errors raised by the integrators, controllers and the spectral solver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DlnError {
    #[error("theta must lie in [0, 1], got {0}")]
    InvalidTheta(f64),

    #[error("time steps must be positive and finite (k_n = {k_n}, k_n-1 = {k_nm1})")]
    InvalidStep { k_n: f64, k_nm1: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("stage solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("non-finite state produced at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<DlnError>,
    },

    #[error("AB2-like history is degenerate: broadcast points coincide")]
    DegenerateHistory,

    #[error("LTE coefficient divisor G + R vanishes (G = {g:.6e}, R = {r:.6e})")]
    ZeroDivisor { g: f64, r: f64 },

    #[error("relative estimator undefined for a zero-norm solution")]
    ZeroNorm,

    #[error("more than {max} rejected attempts at t = {t}")]
    TooManyRejects { t: f64, max: usize },

    #[error("viscous dissipation vanishes while numerical dissipation is {e_nd:.3e}")]
    ZeroViscousDissipation { e_nd: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("grid invalid: {0}")]
    InvalidGrid(String),

    #[error("field has non-zero mean {0:.3e}; the H^-1 norm needs a mean-zero field")]
    NonZeroMean(f64),

    #[error("linear solver stagnated after {iterations} iterations (relative residual {residual:.3e})")]
    LinearSolverStagnation { iterations: usize, residual: f64 },

    #[error("non-finite field produced at t = {t}")]
    NonFiniteField { t: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = DlnError> = std::result::Result<T, E>;

impl From<std::io::Error> for DlnError {
    fn from(err: std::io::Error) -> Self {
        DlnError::Io(err.to_string())
    }
}
