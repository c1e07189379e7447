use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cube index ({0}, {1}, {2}) out of bounds for grid dims ({3}, {4}, {5})")]
    IndexOutOfBounds(usize, usize, usize, usize, usize, usize),

    #[error("invalid plume parameters: {0}")]
    InvalidPlumeParams(String),

    #[error("non-positive wind speed {0} (must be >= floor)")]
    NonPositiveWind(f64),

    #[error(
        "convexity guard violated: sigma_z^2 = {sigma_z_sq} must exceed \
         max(2*z_max^2, 2*H0^2) = {bound} (z_max = {z_max}, H0 = {h0})"
    )]
    ConvexityGuard {
        sigma_z_sq: f64,
        bound: f64,
        z_max: f64,
        h0: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("not enough samples: got {got}, need at least {need}")]
    NotEnoughSamples { got: usize, need: usize },

    #[error("invalid selection: delta {delta} must be below threshold {threshold}")]
    InvalidSelection { delta: f64, threshold: f64 },

    #[error("empty selection set")]
    EmptySelection,

    #[error("battery budget {budget} too small to reach any cube (cheapest leg costs {cheapest})")]
    InsufficientBudget { budget: f64, cheapest: f64 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("parse error at {path}:{line}: {msg}")]
    ParseLine {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
