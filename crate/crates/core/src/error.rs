use thiserror::Error;

/// Errors raised by model construction, matrix builders, the solver and the
/// bound machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rate function is negative: min {min:.3e} at t = {at:.6}")]
    NegativeRate { min: f64, at: f64 },

    #[error("balking probability leaves [0, 1]: value {value:.6} at t = {at:.6}")]
    BalkingOutOfRange { value: f64, at: f64 },

    #[error("invalid rate function: {0}")]
    InvalidRate(String),

    #[error("invalid weight sequence: {0}")]
    InvalidWeights(String),

    #[error("truncation dimension {n} too small (need at least {min})")]
    DimensionTooSmall { n: usize, min: usize },

    #[error("equal-catastrophe construction requested but the catastrophe rates differ")]
    UnequalCatastrophes,

    #[error("matrix variant mismatch: expected {expected}, got {actual}")]
    VariantMismatch { expected: &'static str, actual: &'static str },

    #[error("tail expression not constant: {first} vs {second}")]
    TailNotHomogeneous { first: f64, second: f64 },

    #[error("rate is not ergodic: period mean {mean:.6e} is not positive")]
    NotErgodic { mean: f64 },

    #[error("step {step:.3e} exceeds stability limit 1/(4L) = {limit:.3e}")]
    StepTooLarge { step: f64, limit: f64 },

    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),

    #[error("integration failed at t = {t:.4}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("rates are not constant in time")]
    NotConstant,

    #[error("singular linear system in stationary solve")]
    SingularSystem,

    #[error("limiting regime not reached: periodicity defect {defect:.3e} (tolerance {tolerance:.1e}); start the window later")]
    NotConverged { defect: f64, tolerance: f64 },

    #[error("truncation refinement exceeded the dimension budget {budget}")]
    BudgetExceeded { budget: usize },

    #[error("perturbed model violates admissibility: {0}")]
    Perturbation(String),

    #[error("missing repair-probability input for a repair-scaled forcing term")]
    MissingRepairCurve,
}

pub type Result<T> = std::result::Result<T, Error>;
