//! A minimal self-contained tensor and layer engine: just enough conv,
//! pooling, attention and dense machinery to train the candidate policy at
//! toy scale, with every backward pass checked against finite differences.

pub mod attention;
pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod policy;
pub mod tensor;
pub mod train;

pub use attention::{CbamBlock, ChannelAttention, SpatialAttention};
pub use checkpoint::{
    deserialize as deserialize_checkpoint, load_checkpoint, save_checkpoint,
    serialize as serialize_checkpoint,
};
pub use optim::{Adam, AdamConfig};
pub use policy::{PolicyConfig, PolicyNet, PolicyOutput, STATE_DIM};
pub use tensor::Tensor;
pub use train::{
    chain_to_raw, conditioning_vector, frame_loss, terminals_from_output, train_step, TrainFrame,
    TrainSetup,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MicronetError {
    #[error("input resolution {got:?} does not match the configured {expected:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Objective(#[from] crate::objectives::ObjectiveError),
}
