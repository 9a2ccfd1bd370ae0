use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degree overflow: {k} + {l} > 4")]
    DegreeOverflow { k: usize, l: usize },

    #[error("invalid form degree {0} for this operation")]
    InvalidDegree(usize),

    #[error("fields live on different domains")]
    DomainMismatch,

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("gauge transform is not unitary at site {site} (defect {defect:.3e})")]
    NonUnitary { site: usize, defect: f64 },

    #[error("parameter {name} = {value} out of range: {reason}")]
    OutOfRange { name: &'static str, value: f64, reason: String },

    #[error("scale {scale} is not resolved by spacing {h} (need scale >= {min_ratio} h)")]
    UnderResolved { scale: f64, h: f64, min_ratio: f64 },

    #[error("scale separation violated: bubble scale {lambda} > cutoff {eta} / 4")]
    ScaleSeparation { lambda: f64, eta: f64 },

    #[error("regions out of order: {0}")]
    RegionOrdering(String),

    #[error("negative discriminant {0:.3e}")]
    Discriminant(f64),

    #[error("no bubble: enclosed energy {total:.6e} never reaches eps0/2 = {half:.6e}")]
    NoBubble { total: f64, half: f64 },

    #[error("perturbation is nonzero at site {site} outside the allowed support")]
    SupportViolation { site: usize },

    #[error("annulus too thin: {0}")]
    AnnulusTooThin(String),

    #[error("weight is not positive at site {site} (value {value})")]
    NonPositiveWeight { site: usize, value: f64 },

    #[error("eigensolver did not converge after {iterations} iterations; residual norms {residuals:?}")]
    SolverNonConvergence { iterations: usize, residuals: Vec<f64> },

    #[error("mass matrix is not positive definite")]
    MassNotPositive,

    #[error("energy increased after {backtracks} backtracks at step {step} (from {from:.12e} to {to:.12e})")]
    Divergence { step: usize, backtracks: usize, from: f64, to: f64 },

    #[error("sylvester invariance failed: {0}")]
    SylvesterMismatch(String),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
