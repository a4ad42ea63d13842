//! The learned rewriting policy: a Child-Sum Tree-LSTM over the schedule
//! DAG, a region-score head `Q(s, ω)`, a rule head `π_u`, actor-critic
//! losses with hand-written gradients, Adam, and the training loop.

mod adam;
mod checkpoint;
mod eval;
mod gradcheck;
mod loss;
mod net;
mod train;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, relative_error, relu_margin, TensorError};
pub use eval::{fcfs_initial, validate_policy, NetPolicy};
pub use loss::{actor_grad, critic_grad, losses, returns, Losses};
pub use net::{argmax, sample_index, softmax, Encoding, HeadCache, InputCache, NetConfig, Offsets, PolicyNet};
pub use train::{
    rollout, train, trajectory_gradient, trajectory_loss, CurveRow, Episode, StepRecord, TrainConfig, TrainEvent,
    TrainState,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("loss is not finite")]
    NonFinite,
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
