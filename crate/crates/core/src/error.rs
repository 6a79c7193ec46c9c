use thiserror::Error;

pub type Result<T> = std::result::Result<T, SipError>;

#[derive(Debug, Error)]
pub enum SipError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state space of size {size} exceeds the cap of {cap} states")]
    StateCapExceeded { size: usize, cap: usize },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("verification failed [{check}]: {detail}")]
    Verification { check: String, detail: String },

    #[error("not an eigenfunction: residual {residual:.3e} exceeds {tolerance:.3e}")]
    NotEigenfunction { residual: f64, tolerance: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SipError {
    pub fn verification(check: impl Into<String>, detail: impl Into<String>) -> Self {
        SipError::Verification {
            check: check.into(),
            detail: detail.into(),
        }
    }
}
