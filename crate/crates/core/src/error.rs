use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error(
        "truncated SVD did not converge after {iterations} iterations (residual {residual:e})"
    )]
    SvdNotConverged { iterations: usize, residual: f64 },

    #[error("degenerate rank: smallest singular value is {sigma_min:e}")]
    DegenerateRank { sigma_min: f64 },

    /// The retracted point lost rank; `spectrum` is the full core spectrum.
    #[error("rank collapse: sigma_r / sigma_1 = {ratio:e}")]
    RankCollapse { ratio: f64, spectrum: Vec<f64> },

    #[error("degenerate stepsize denominator {denominator:e}")]
    DegenerateStepsize { denominator: f64 },

    #[error("tangent vectors are based at different points")]
    BaseMismatch,

    #[error("parameter regime violated: {0}")]
    Regime(String),

    #[error("initialization failed: {0}")]
    InitFailure(Box<Error>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
