//! Dual sub-network pose regressor with a small reverse-mode autodiff kernel.

pub mod checkpoint;
pub mod config;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use config::{ConvSpec, HeadLayout, SubNetConfig, SubNetKind};
pub use graph::{Gradients, Graph, NodeId, ParamId};
pub use loss::{loss_6dof, total_loss, DEFAULT_K};
pub use model::{DeepPcoModel, LossBreakdown, ModelConfig, ModelMode, ParamStore, Prediction};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called on a node that is not part of a recorded graph")]
    GraphNotBuilt,
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("layer type `{0}` is not allowed (no pooling or normalization layers)")]
    ForbiddenLayer(String),
    #[error("checkpoint config digest {found} does not match model digest {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<tensor::ShapeError> for NetworkError {
    fn from(e: tensor::ShapeError) -> Self {
        NetworkError::ShapeMismatch(e.to_string())
    }
}
