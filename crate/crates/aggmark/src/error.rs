//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation is defined on
    /// (times out of order, indices out of range, missing reset structure, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A model failed structural validation (dimensions, row sums, signs).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An ODE sweep produced entries beyond the blow-up threshold or NaN.
    #[error("numerical blow-up at time {time}: {detail}")]
    NumericalBlowup { time: f64, detail: String },

    /// Conditioning on an event whose probability mass is numerically zero.
    #[error("conditioning on a null event: {0}")]
    NullConditioning(String),

    /// The next-mark distribution was requested at a time where no jump can occur.
    #[error("no jump possible at time {time}: total exit rate is numerically zero")]
    NoJumpPossible { time: f64 },

    /// A thinning proposal saw an intensity above its sampled bound.
    #[error("thinning bound violated at time {time}: rate {rate} exceeds bound {bound}")]
    ThinningBound { time: f64, rate: f64, bound: f64 },

    /// Rejection conditioning accepted too few paths to be usable.
    #[error("infeasible conditioning: acceptance rate below {threshold:e}")]
    InfeasibleConditioning { threshold: f64 },

    /// A run configuration could not be parsed or is internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
