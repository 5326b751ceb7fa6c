use thiserror::Error;

#[derive(Debug, Error)]
pub enum QsdError {
    #[error("drift rate must be strictly positive, got {0}")]
    NonPositiveDrift(f64),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("integrability condition violated: {0}")]
    Integrability(String),

    #[error("numerical underflow: {0}")]
    Underflow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QsdError>;
