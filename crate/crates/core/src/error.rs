use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sample grid: {0}")]
    InvalidGrid(String),

    #[error("sample grids differ: {0}")]
    GridMismatch(String),

    #[error("{what} = {seconds} s is not an integer multiple of the sample period {dt} s")]
    OffGrid {
        what: String,
        seconds: f64,
        dt: f64,
    },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("series kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("servo gain {gain_per_s} 1/s violates the stability bound gain * 2 tau < 1 (bound {bound_per_s} 1/s)")]
    UnstableLoop { gain_per_s: f64, bound_per_s: f64 },

    #[error("insufficient data: {what}{}", suggestion.map(|s| format!(" (largest feasible tau: {s} s)")).unwrap_or_default())]
    Insufficient {
        what: String,
        suggestion: Option<f64>,
    },

    #[error("flat regressor: {0}")]
    FlatRegressor(String),

    #[error("rank-deficient design: {detail}")]
    RankDeficient { detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the inputs a user supplied rather than by
    /// the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidGrid(_)
                | Error::OffGrid { .. }
                | Error::InvalidConfig(_)
                | Error::UnstableLoop { .. }
                | Error::Json(_)
        )
    }
}
