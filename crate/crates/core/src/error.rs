use thiserror::Error;

/// Errors raised by the simulation, estimation and verification routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("simulation diverged at step {step} (value {value})")]
    Divergence { step: usize, value: f64 },

    #[error("bin edges must be strictly increasing with at least two edges")]
    InvalidBins,

    #[error("stationary crossing of level {level} at time {time}: |X'| = {slope} is below tolerance")]
    StationaryLevel { level: f64, time: f64, slope: f64 },

    #[error("Skorohod map requires a path starting at 0, got {0}")]
    NonzeroStart(f64),

    #[error("clock density must be positive, got g^2 = {value} at source index {index}")]
    NonPositiveClock { index: usize, value: f64 },

    #[error("requested horizon {requested} exceeds the time change's max attained time {max_attained}")]
    HorizonOverrun { requested: f64, max_attained: f64 },

    #[error("local-time field x-grid [{grid_lo}, {grid_hi}] does not cover the band around path range [{path_lo}, {path_hi}]")]
    FieldCoverage {
        grid_lo: f64,
        grid_hi: f64,
        path_lo: f64,
        path_hi: f64,
    },

    #[error("empirical distribution needs at least two finite samples, got {0}")]
    TooFewSamples(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
