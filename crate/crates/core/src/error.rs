use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix has (near) zero variance: std = {0:e}")]
    ZeroVariance(f64),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("edge ({i}, {j}) is near-singular: Σii·Σjj − (Σres_ij)² = {value:e}")]
    NearSingularPair { i: usize, j: usize, value: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("selection mask is empty")]
    EmptySelection,

    #[error("matrix has no numerically independent columns")]
    RankDeficient,

    #[error("cannot draw a mask with every row and column observed: {0}")]
    DegenerateMask(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
