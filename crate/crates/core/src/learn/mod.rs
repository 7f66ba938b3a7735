//! Training and evaluation loops for the policy, plus the nearest-neighbor
//! replay baseline.

mod adapt;
mod bc;
mod knn;
mod objectives;
mod rollout;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adapt::{adapt_online, AdaptCurve, Adapter, CurveRow};
pub use bc::{train_bc, BcTrainer};
pub use knn::{knn_episode, knn_evaluate, KnnMode, KnnReplay};
pub use objectives::{
    bc_loss, bc_loss_and_grad, combined_grad, combined_update, reinforce_grad,
    reinforce_grad_with_baseline, UpdateLosses,
};
pub use rollout::{
    evaluate, generate_demos, rollout, success_rate, Controller, EvalStats, Rollout, ScriptedExpert,
};

use crate::policy::{Adam, PolicyError, PolicyParams};
use crate::reward::RewardError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("online batch has {online} records but offline batch has {offline}")]
    BatchMismatch { online: usize, offline: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Training and adaptation hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    pub n_primitives: usize,
    pub iterations: usize,
    pub rollouts_per_iteration: usize,
    pub grad_steps_per_iteration: usize,
    /// Weight of the imitation loss during adaptation.
    pub alpha: f64,
    pub bc_lr: f64,
    pub rl_lr: f64,
    pub bc_epochs: usize,
    pub bc_batch: usize,
    pub eval_episodes: usize,
    /// Subtract a running mean of past rewards from each return.
    pub reward_baseline: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            n_primitives: 2,
            iterations: 5,
            rollouts_per_iteration: 5,
            grad_steps_per_iteration: 10,
            alpha: 1.0,
            bc_lr: 1e-3,
            rl_lr: 1e-3,
            bc_epochs: 200,
            bc_batch: 16,
            eval_episodes: 20,
            reward_baseline: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let positive = [
            ("n_primitives", self.n_primitives),
            ("rollouts_per_iteration", self.rollouts_per_iteration),
            ("grad_steps_per_iteration", self.grad_steps_per_iteration),
            ("bc_epochs", self.bc_epochs),
            ("bc_batch", self.bc_batch),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(LearnError::Config(format!("{name} must be positive")));
            }
        }
        if self.n_primitives > crate::policy::MAX_PRIMITIVES {
            return Err(LearnError::Config("n_primitives must be at most 4".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("bc_lr", self.bc_lr),
            ("rl_lr", self.rl_lr),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LearnError::Config(format!("{name} must be non-negative")));
            }
        }
        if self.bc_lr == 0.0 || self.rl_lr == 0.0 {
            return Err(LearnError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Everything that evolves during training; enough to resume bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PolicyParams,
    pub opt: Adam,
    pub rng: ChaCha8Rng,
    /// Completed epochs (imitation) or iterations (adaptation).
    pub step: u64,
    pub reward_sum: f64,
    pub reward_count: u64,
}

impl TrainState {
    pub fn new(params: PolicyParams, rng: ChaCha8Rng) -> Self {
        let opt = Adam::new(params.len());
        TrainState {
            params,
            opt,
            rng,
            step: 0,
            reward_sum: 0.0,
            reward_count: 0,
        }
    }

    /// Fresh optimizer and counters for a new phase, keeping params and rng.
    pub fn restart(self) -> Self {
        TrainState::new(self.params, self.rng)
    }

    pub fn running_baseline(&self) -> f64 {
        if self.reward_count == 0 {
            0.0
        } else {
            self.reward_sum / self.reward_count as f64
        }
    }
}

/// Child stream for one unit of work, so that work units do not share draws.
pub(crate) fn fork(rng: &mut ChaCha8Rng) -> ChaCha8Rng {
    use rand::RngCore;
    ChaCha8Rng::seed_from_u64(rng.next_u64())
}
