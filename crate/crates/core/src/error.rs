use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite {what} at x = {point:?}")]
    NonFinite { what: &'static str, point: Vec<f64> },

    #[error("missing derivative evaluator of order {order} for {what}")]
    MissingDerivative { what: &'static str, order: usize },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("implicit solver failed after {iterations} iterations (residual {residual:e})")]
    SolverFailed { iterations: usize, residual: f64 },

    #[error("step {step}: {source}")]
    AtStep { step: u64, source: Box<Error> },

    #[error("point {x} is outside the tabulated domain [{lo}, {hi}]")]
    OutsideTable { x: f64, lo: f64, hi: f64 },

    #[error("{escaped} of {total} samples left the tabulated domain")]
    TableEscape { escaped: usize, total: usize },

    #[error("diffusion degenerates near x = {x} (sigma^2 = {sigma_sq:e})")]
    Degenerate { x: f64, sigma_sq: f64 },

    #[error("tail mass bound {bound:e} exceeds 1e-12 even at R = {radius}; use a larger domain")]
    TailTooHeavy { bound: f64, radius: f64 },

    #[error("test function growth is incompatible with the density tails ({detail})")]
    GrowthIncompatible { detail: String },

    #[error("Stein residual {residual:e} exceeds the 1e-8 budget; refine the grid")]
    ResidualTooLarge { residual: f64 },

    #[error("inconsistent noise refinement: {0}")]
    Refinement(String),

    #[error("need at least {needed} signal rows for a slope fit, got {got}")]
    TooFewRows { needed: usize, got: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
