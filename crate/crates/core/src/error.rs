use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("constellation order must be at least 2, got {0}")]
    InvalidOrder(usize),

    #[error("invalid constellation parameter: {0}")]
    InvalidConstellation(String),

    #[error("amplitude index {index} outside 1..={order}")]
    IndexOutOfRange { index: usize, order: usize },

    #[error("user index {user} out of range for {users} users")]
    UserOutOfRange { user: usize, users: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise standard deviation must be positive, got {0}")]
    InvalidNoise(f64),

    #[error("CSI error variance must be non-negative, got {0}")]
    NegativeVariance(f64),

    #[error("beamforming vector has zero norm")]
    ZeroWeights,

    #[error("channel matrix is rank deficient (condition number {0:e})")]
    Singular(f64),

    #[error("w h_k is zero, orientation is undefined")]
    DegenerateOrientation,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("sample count must be positive")]
    ZeroSamples,

    #[error("QAM order {0} is not an even power of two")]
    NonSquareQam(usize),

    #[error("start point is not strictly feasible")]
    InfeasibleStart,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
