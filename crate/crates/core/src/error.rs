use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid value {value} at pixel ({x}, {y}): {reason}")]
    InvalidPixel {
        x: usize,
        y: usize,
        value: f64,
        reason: &'static str,
    },

    #[error("need at least {needed} valid pixels, have {have}")]
    TooFewPixels { needed: usize, have: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed PFM: {0}")]
    MalformedPfm(String),

    #[error("unsupported channel count: only single-channel (\"Pf\") maps are supported")]
    UnsupportedChannels,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("evaluation point is not generic after {0} resampling attempts")]
    NonGenericPoint(usize),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
