use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point cloud")]
    EmptyMeasure,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("all weights are zero")]
    ZeroWeights,
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("assignment requires equal-size, equal-weight clouds")]
    UnequalClouds,
    #[error("cloud size {size} exceeds the assignment cap {cap}")]
    AssignmentCap { size: usize, cap: usize },
    #[error("covariance is not symmetric positive semi-definite")]
    NotPsd,
    #[error("drift decomposition mismatch: |b - (b0 + sigma0 b1)| = {residual:e}")]
    Decomposition { residual: f64 },
    #[error("singular sigma0 (condition number {condition:e})")]
    SingularSigma0 { condition: f64 },
    #[error("control {0:?} lies outside the control set")]
    OutsideControlSet(Vec<f64>),
    #[error("non-finite state at step {step}")]
    BlowUp { step: usize },
    #[error("rank-deficient regression at step {step} (condition number {condition:e})")]
    RankDeficient { step: usize, condition: f64 },
    #[error("{features} regression features exceed one tenth of {samples} samples")]
    TooManyFeatures { features: usize, samples: usize },
    #[error("CFL condition violated: courant number {courant:.3}")]
    Cfl { courant: f64 },
    #[error("time {0} lies outside the grid")]
    TimeOutOfGrid(f64),
    #[error("model is not supported here: {0}")]
    Unsupported(String),
    #[error("fit refused: {0}")]
    UnderPowered(String),
    #[error("non-positive statistic {0} in log-log fit")]
    NonPositiveStatistic(f64),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
