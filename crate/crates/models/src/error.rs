use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model has not been trained")]
    UntrainedModel,
    #[error("patch of {size}x{size} too small for offset reach {reach}")]
    DegeneratePatch { size: usize, reach: usize },
    #[error("{pixels} pixels exceeds the exact-inference cap of {cap}")]
    ImageTooLarge { pixels: usize, cap: usize },
    #[error(transparent)]
    Core(#[from] postdae_core::Error),
    #[error(transparent)]
    Checkpoint(#[from] postdae_nn::CheckpointError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
