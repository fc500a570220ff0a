use thiserror::Error;

/// Errors surfaced by model evaluation, estimation, policies, and the
/// simulation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("history contains no usable rounds")]
    EmptyHistory,

    #[error("reward mean {0} outside [0, 1]")]
    InvalidMean(f64),

    #[error("invalid probability {0}")]
    InvalidProbability(f64),

    #[error("confidence radius undefined for round {0} (need t >= 2)")]
    RadiusUndefined(f64),

    #[error("negative confidence radius {0}")]
    InvalidRadius(f64),

    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("capacity {capacity} exceeds arm count {arms}")]
    CapacityExceedsArms { capacity: usize, arms: usize },

    #[error("round {round} outside recorded history of length {len}")]
    RoundOutOfRange { round: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ordering violation at line {line}: {message}")]
    Order { line: usize, message: String },

    #[error("instance too large to enumerate: {0}")]
    TooLarge(String),

    #[error("no reward gap: instance is degenerate")]
    GapDegenerate,

    #[error("invalid bound input: {0}")]
    InvalidBound(String),
}

pub type Result<T> = std::result::Result<T, Error>;
