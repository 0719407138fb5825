use thiserror::Error;

/// Errors raised while building or running a market-making model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("correlation matrix is not a valid correlation: {0}")]
    InvalidCorrelation(String),

    #[error("covariance is not positive semidefinite: most negative eigenvalue {eigenvalue:.6e} (tolerance {tolerance:.3e})")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },

    #[error("matrix is not symmetric: |A[{row}][{col}] - A[{col}][{row}]| = {gap:.3e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("explicit scheme unstable: dt = {dt} exceeds 0.9/K = {required} (K = {budget})")]
    Unstable { dt: f64, required: f64, budget: f64 },

    #[error("non-finite value in time slice {slice}")]
    NonFinite { slice: usize },

    #[error("point {point:?} lies outside the grid bounding box")]
    OutOfDomain { point: Vec<f64> },

    #[error("penalty `{0}` is not differentiable on the visited range; residual correction needs a quadratic or zero form")]
    NonDifferentiablePenalty(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("surface cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
