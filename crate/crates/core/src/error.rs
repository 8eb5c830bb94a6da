use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid material parameters: {}", .0.join("; "))]
    InvalidMaterial(Vec<String>),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("deformation gradient is not orientation preserving (det F = {det:e})")]
    Inverted { det: f64 },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("step rejected: {0}")]
    StepRejected(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("checkpoint does not match the configuration ({0})")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
