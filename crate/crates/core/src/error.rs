use thiserror::Error;

/// Errors raised across the crate. Messages carry the module and operation
/// that failed so the command line can surface them verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("sve_core::coarsen: cannot coarsen a level-0 path")]
    LevelUnderflow,

    #[error("filters::multinomial_resample: all weights are zero")]
    DegenerateWeights,

    #[error("models::kappa_sv: degenerate variance at t = {t}")]
    DegenerateVariance { t: usize },

    #[error("filters::{op}: all particle weights vanished at t = {t}")]
    FilterCollapse { op: &'static str, t: usize },

    #[error("multilevel::h_weights: weight underflow (log weight {log_weight})")]
    DegenerateWeight { log_weight: f64 },

    #[error("multilevel::increment_estimator: sum of {which} weights is zero")]
    DegenerateDenominator { which: &'static str },

    #[error("mcmc::{op}: initial state collapsed after {tries} prior draws")]
    InitialisationFailed { op: &'static str, tries: usize },

    #[error("{op}: empty sample (nothing left after burn-in)")]
    EmptySample { op: &'static str },

    #[error("experiments::rate_study: need at least {needed} usable grid points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("multilevel::ml_estimate: level {level} failed: {source}")]
    LevelFailed {
        level: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("functional: {0}")]
    Functional(String),

    #[error("io::{op}: row {row}: {msg}")]
    Data { op: &'static str, row: usize, msg: String },

    #[error("io::{op}: schema error: {msg}")]
    Schema { op: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Error {
    Error::Domain { op, msg: msg.into() }
}
