use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate probe")]
    DegenerateProbe,
    #[error("failed to build an order-{order} basis after {restarts} restarts")]
    LanczosExhausted { order: usize, restarts: usize },
    #[error("Newton-step singularity")]
    NewtonSingularity,
    #[error("at minimum, threshold undefined")]
    AtMinimum,
    #[error("bracket does not straddle equilibrium")]
    BracketNoStraddle,
    #[error("invalid step-size function: alpha({x}) = {value}")]
    InvalidAlpha { x: f64, value: f64 },
    #[error("enumeration horizon {t} exceeds the limit of {max}")]
    HorizonTooLarge { t: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
