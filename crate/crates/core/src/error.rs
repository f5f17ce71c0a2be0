use thiserror::Error;

use crate::gp::GpModel;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("matrix is not positive semi-definite (jitter escalated to {max_jitter:e})")]
    NotPsd { max_jitter: f64 },

    #[error("kernel matrix is singular (jitter escalated to {max_jitter:e})")]
    SingularKernel { max_jitter: f64 },

    #[error("hyperparameter fit failed after {restarts} restarts")]
    FitFailed {
        restarts: usize,
        best: Option<Box<GpModel>>,
    },

    #[error("sobol dimension {requested} exceeds the direction-number table ({available}); use iid base samples instead")]
    SobolDimension { requested: usize, available: usize },

    #[error("invalid direction-number table: {0}")]
    SobolTable(String),

    #[error("base samples provide {available} columns but {required} are needed (frozen SAA samples cannot be reshaped)")]
    BaseSampleShape { required: usize, available: usize },

    #[error("objective error: {0}")]
    Objective(String),

    #[error("acquisition error: {0}")]
    Acquisition(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("point outside bounds: {0}")]
    OutOfBounds(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
