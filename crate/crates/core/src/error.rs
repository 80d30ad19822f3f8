use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid radius {0}: must be finite and > 0")]
    InvalidRadius(f64),
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(f64),
    #[error("ball union must contain at least one ball")]
    EmptyUnion,
    #[error("exact volumes are only available in dimension 1 (got d = {0})")]
    ExactRequiresLine(usize),
    #[error("uniform sampling gave up after {0} rejected proposals")]
    SamplingExhausted(u64),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("query time {t} is outside the computed horizon [0, {horizon})")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("coupling precondition violated: {0}")]
    Coupling(String),
    #[error("estimator too noisy: standard error {stderr} against a gap of {gap}")]
    EstimatorTooNoisy { stderr: f64, gap: f64 },
    #[error("grid of {cells} cells exceeds the budget of {budget}")]
    GridBudget { cells: u128, budget: u128 },
    #[error("replay mismatch at step {step}: {what}")]
    ReplayMismatch { step: usize, what: String },
    #[error("observer failed: {0}")]
    Observer(String),
    #[error("malformed record at line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
