use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: empty tick file")]
    EmptyFile { path: PathBuf },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: row {row}: non-positive price {price}")]
    NonPositivePrice { path: PathBuf, row: usize, price: f64 },

    #[error("need at least {needed} ticks, got {got}")]
    TooFewTicks { needed: usize, got: usize },

    #[error("pooled return standard deviation is zero; volatility is degenerate (constant prices?)")]
    DegenerateVolatility,

    #[error("gamma[{index}] = {value} is outside the open interval (0, 1)")]
    FractionOutOfRange { index: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite state during leapfrog integration")]
    Divergence,

    #[error("chain has {available} draws, need at least {required}")]
    InsufficientDraws { available: usize, required: usize },

    #[error("option price {price} violates the {bound} bound {limit}")]
    PriceBound {
        price: f64,
        bound: &'static str,
        limit: f64,
    },

    #[error("implied volatility did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("non-positive Dupire denominator {0} (butterfly arbitrage in call prices)")]
    ButterflyArbitrage(f64),

    #[error("point (K={strike}, T={expiry}) is not an interior grid node")]
    NotInterior { strike: f64, expiry: f64 },

    #[error("no valid quotes: {0}")]
    NoValidQuotes(String),

    #[error("no overlap between quoted strikes and the surface price range [{lo}, {hi}]")]
    NoOverlap { lo: f64, hi: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
