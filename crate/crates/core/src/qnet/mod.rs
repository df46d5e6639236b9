//! Q-function over (observation, action) pairs.

mod action;
mod checkpoint;
mod network;
mod params;

pub use action::{
    decode_action, encode_action, ActionDelta, ActionIndex, IDENTITY_ACTION, NUM_ACTIONS,
    ROTATION_STEP_DEG, TRANSLATION_STEP_M,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{greedy_action, layout, QNetwork, Variant, INPUT_SCALE};
pub use params::*;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QnetError {
    #[error("action index {0} out of range")]
    ActionOutOfRange(usize),
    #[error("invalid action delta {0:?}")]
    InvalidDelta([i8; 6]),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
