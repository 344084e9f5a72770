use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("weight matrix is not symmetric positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("weight vector must be entrywise positive (entry {index} is {value})")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("lp exponent must satisfy 1 < p < inf, got {0}")]
    InvalidExponent(f64),

    #[error("{operation} does not support the {norm} norm")]
    UnsupportedNorm { operation: &'static str, norm: String },

    #[error("eigenvalue iteration did not converge")]
    EigenNonConvergence,

    #[error("matrix is not Hurwitz at rate {rate}: spectral abscissa {alpha}")]
    NotHurwitz { alpha: f64, rate: f64 },

    #[error("matrix is not Metzler: entry ({row}, {col}) is {value}")]
    NotMetzler { row: usize, col: usize, value: f64 },

    #[error("Lyapunov equation is singular")]
    SingularLyapunov,

    #[error("system is not contracting: one-sided Lipschitz bound {bound}")]
    NotContracting { bound: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sample set")]
    EmptySample,

    #[error("evaluator returned a non-finite value at {0:?}")]
    EvaluationFailed(Vec<f64>),

    #[error("fixed-point iteration hit the iteration cap ({iterations}) with a-posteriori bound {bound:e}")]
    MaxIterations { iterations: usize, bound: f64, last: Vec<f64> },

    #[error("fixed-point iteration diverges: measured step ratio {ratio}")]
    Divergence { ratio: f64, iterations: usize },

    #[error("integration blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("distance between trajectories underflowed for every pair")]
    DistanceUnderflow,
}
