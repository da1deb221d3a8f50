use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("word of length {len} exceeds truncation depth {depth}")]
    DepthExceeded { len: usize, depth: usize },
    #[error("invalid word: {0}")]
    InvalidWord(String),
    #[error("timestamps must be non-decreasing (index {index})")]
    NonMonotoneTime { index: usize },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("the time letter 0 has no terminal gradient")]
    TimeLetterForbidden,
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("rank deficient anchor set: retained {retained} of {requested}")]
    RankDeficient { retained: usize, requested: usize },
    #[error("need at least {needed} anchor paths, got {got}")]
    InsufficientAnchors { needed: usize, got: usize },
    #[error("Sherman-Morrison denominator {0} is degenerate")]
    DenominatorDegenerate(f64),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("herding trace of length {0} is too short (need 20)")]
    TraceTooShort(usize),
    #[error("dual ascent did not converge: residual {residual} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error("step would move the clock past the horizon end ({clock} + {step} > {end})")]
    HorizonExceeded { clock: f64, step: f64, end: f64 },
    #[error("proxy grid does not cover [{start}, {end}]")]
    ProxyGridGap { start: f64, end: f64 },
    #[error("full tensor space of size {0} is too large for the projection probe")]
    FullSpaceTooLarge(usize),
    #[error("switch time {0} lies outside the horizon")]
    SwitchOutsideHorizon(f64),
    #[error("grid time {0} lies outside the reference support")]
    GridOutsideSupport(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::DepthExceeded { .. } => "depth_exceeded",
            Error::InvalidWord(_) => "invalid_word",
            Error::NonMonotoneTime { .. } => "non_monotone_time",
            Error::InvalidPath(_) => "invalid_path",
            Error::NegativeDuration(_) => "negative_duration",
            Error::TimeLetterForbidden => "time_letter_forbidden",
            Error::EmptyEnsemble => "empty_ensemble",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::InsufficientAnchors { .. } => "insufficient_anchors",
            Error::DenominatorDegenerate(_) => "denominator_degenerate",
            Error::EmptyCandidates => "empty_candidates",
            Error::TraceTooShort(_) => "trace_too_short",
            Error::NotConverged { .. } => "not_converged",
            Error::HorizonExceeded { .. } => "horizon_exceeded",
            Error::ProxyGridGap { .. } => "proxy_grid_gap",
            Error::FullSpaceTooLarge(_) => "full_space_too_large",
            Error::SwitchOutsideHorizon(_) => "switch_outside_horizon",
            Error::GridOutsideSupport(_) => "grid_outside_support",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
