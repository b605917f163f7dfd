use thiserror::Error;

/// Errors raised by the numerical laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KfpError {
    #[error("block sizes m must be non-increasing and positive, got {0:?}")]
    NonMonotoneBlocks(Vec<usize>),

    #[error("block B_{index} has shape {got:?}, expected {expected:?}")]
    BlockShape {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("block B_{index} is rank deficient (rank {rank} < {required})")]
    RankDeficient {
        index: usize,
        rank: usize,
        required: usize,
    },

    #[error("expected {expected} blocks, got {got}")]
    BlockCount { expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("time ordering violated: need t > s, got t = {t}, s = {s}")]
    TimeOrder { t: f64, s: f64 },

    #[error("covariance is not positive definite at t = {t}, s = {s}")]
    Indefinite { t: f64, s: f64 },

    #[error("coefficient matrix violates ellipticity: {0}")]
    Ellipticity(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("integral diverges")]
    Divergent,

    #[error("derivative order {order} exceeds the supported ceiling {ceiling}")]
    DerivativeOrder { order: usize, ceiling: usize },

    #[error("sampled pair violates the declared modulus: |dg| = {observed:e} > {bound:e}")]
    ModulusViolation { observed: f64, bound: f64 },

    #[error("source support violated at t = {t} (must vanish for t <= {tau})")]
    SupportViolation { t: f64, tau: f64 },

    #[error("field does not vanish outside the ball: {0}")]
    SupportOutsideBall(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("fit infeasible: {0}")]
    Infeasible(String),

    #[error("Monte-Carlo error: {0}")]
    MonteCarlo(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, KfpError>;

impl KfpError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        KfpError::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        KfpError::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for KfpError {
    fn from(e: std::io::Error) -> Self {
        KfpError::Io(e.to_string())
    }
}
