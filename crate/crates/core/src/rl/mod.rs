//! Policy learning: maps a reward program to a driving policy.

mod policy;
mod ppo;

use thiserror::Error;

pub use policy::{
    init_policy, sample_action, sidecar_paths, tensor_specs, ActionMode, InputScales, Network, PolicyController,
    PolicyParams, TensorSpec, HIDDEN, INPUT_DIM, LOG_STD_RANGE,
};
pub use ppo::{
    evaluate_return, gae, log_prob, normalize_advantages, ppo_train, surrogate, toy_gradient_check, GradCheckReport,
    SeedRun, TrainConfig, TrainResult,
};

use crate::env::{rollout_with, EnvError, EpisodeRollout};
use crate::rewarddsl::RewardProgram;
use crate::trajdata::CarFollowingEvent;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training data is empty")]
    EmptyDataset,
    #[error("reward produced a non-finite value at {0}")]
    NonFiniteReward(String),
    #[error("policy shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One full episode driven by `policy`. Mean mode is deterministic; stochastic
/// mode draws from an RNG seeded with `seed`.
pub fn rollout(
    policy: &PolicyParams,
    reward: &RewardProgram,
    event: &CarFollowingEvent,
    mode: ActionMode,
    seed: u64,
) -> Result<EpisodeRollout, EnvError> {
    let mut ctl = PolicyController::new(policy, mode, seed);
    rollout_with(&mut ctl, reward, event)
}
