use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("regularity audit failed: ratio {ratio} exceeds C = {c} at ball {witness}")]
    AuditFailure { ratio: f64, c: f64, witness: String },
    #[error("resolution exceeded: level {level} > max level {max}")]
    ResolutionExceeded { level: u32, max: u32 },
    #[error("divergent energy: t = {t} is not below s = {s}")]
    DivergentEnergy { t: f64, s: f64 },
    #[error("energy bound violated: {0}")]
    BoundViolated(String),
    #[error("ambiguous classification: {0}")]
    Ambiguous(String),
    #[error("undefined dimension: {0}")]
    UndefinedDimension(String),
    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
}
