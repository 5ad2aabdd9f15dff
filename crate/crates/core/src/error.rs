use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown activation tag `{0}`")]
    UnknownActivation(String),

    #[error("activation rejected: {0}")]
    InvalidActivation(String),

    #[error("input {x} lies outside the linearization radius {radius}")]
    Radius { x: f64, radius: f64 },

    #[error("value {value} outside the admissible range: {reason}")]
    Domain { value: f64, reason: String },

    #[error("subset-sum instance with {m} candidates exceeds the solver limit of {limit}")]
    SubsetSize { m: usize, limit: usize },

    #[error("no pool size up to {cap} reaches success rate {target}")]
    Unattainable { cap: usize, target: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("error budget underflow: layer {layer} tolerance {tolerance:e} is below {floor:e}")]
    BudgetUnderflow { layer: usize, tolerance: f64, floor: f64 },

    #[error("block failure at {0}")]
    BlockFailure(String),

    #[error("source capacity exhausted at {0}")]
    CapacityExhausted(String),

    #[error("corrupted manifest: {0}")]
    Manifest(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
