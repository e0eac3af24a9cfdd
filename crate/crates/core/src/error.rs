use thiserror::Error;

#[derive(Debug, Error)]
pub enum JflowError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected} grid points, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("form is not a Kähler metric at grid point {index} (min eigenvalue {min_eigenvalue:e})")]
    NotKahler { index: usize, min_eigenvalue: f64 },

    #[error("time step stalled at t = {t} (dt = {dt:e} below dt_min)")]
    StepStalled { t: f64, dt: f64 },

    #[error("convexity lost: {0}")]
    ConvexityLost(String),

    #[error("operation not supported on the {0} backend")]
    UnsupportedBackend(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, JflowError>;
