use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("insufficient dealiasing: n_phys = {n_phys} < {required} required for sigma = {sigma}")]
    Dealiasing { n_phys: usize, required: usize, sigma: f64 },

    #[error("mode {mode} out of range 1..={n_modes}")]
    ModeOutOfRange { mode: usize, n_modes: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("covariance mismatch: control lives in a different Cameron-Martin space")]
    CovarianceMismatch,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("control energy {energy} exceeds budget {budget}")]
    BudgetExceeded { energy: f64, budget: f64 },

    #[error("integration blew up at step {step} (t = {time})")]
    IntegrationBlowup { step: usize, time: f64 },

    #[error("bound inapplicable: {0}")]
    BoundInapplicable(String),

    #[error("declared constant {name} = {declared} is below the measured value {measured}")]
    ConstantBelowMeasured {
        name: &'static str,
        declared: f64,
        measured: f64,
    },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("path has {0} time points; at least 3 are required")]
    TooFewTimePoints(usize),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
