//! Goal-level deep Q-learning over belief maps.

pub mod checkpoint;
pub mod net;
pub mod replay;
pub mod state;
pub mod train;

use thiserror::Error;

pub use net::{forward_q, NetShape, QMap, QNetwork};
pub use replay::ReplayBuffer;
pub use state::{
    build_state_tensor, orbit_count, window_orbits, CentroidMask, LiftedState, StateTensor, LIFTED_CHANNELS,
};
pub use train::{
    compute_reward, epsilon_at, masked_select, run_training, select_goal, td_target, train_episode, TrainConfig,
    TrainLogRow, Trainer, TrainingSetup, Transition,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no admissible goal")]
    EmptyMask,
    #[error("replay buffer not ready: {have} of {need} transitions")]
    NotReady { have: usize, need: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
