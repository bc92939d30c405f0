use thiserror::Error;

/// Failures reported by the solvers, constructions and the experiment runner.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("solver diverged: {0}")]
    SolverDiverged(String),
    #[error("trajectory escaped the bounding box at t = {t}: {point:?}")]
    TrajectoryEscaped { t: f64, point: [f64; 2] },
    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),
    #[error("weight certification failed: {0}")]
    CertificationFailed(String),
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidParameter(msg.into())
}
