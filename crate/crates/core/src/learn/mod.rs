//! Policy, value and discriminator networks with manual differentiation,
//! PPO with clipping and generalized advantage estimation, action
//! distillation from a privileged teacher, and the joint training loop.

mod agent;
mod checkpoint;
mod net;
mod ppo;
mod trainer;

pub use agent::{eval_trajectory, real_windows_from_track, Agent, GoalMode};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use net::{Mlp, MlpCache, MlpGrads, Optimizer, OptimizerKind, PolicyNet};
pub use ppo::{
    clip_global_norm, clipped_objective, distill_loss, gae_advantages, gaussian_entropy,
    gaussian_log_prob,
};
pub use trainer::{
    train_student, train_teacher, IterationStats, Strategy, TrainOutcome, TrainRun, Trainer,
    TrainerSetup,
};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub grad_clip: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub disc_lr: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Stop the epoch loop once the mean approximate KL to the collection
    /// policy exceeds this; 0 disables the guard.
    pub kl_target: f64,
    pub distill_weight: f64,
    pub entropy_coef: f64,
    pub optimizer: OptimizerKind,
    pub amp_window: usize,
    pub disc_grad_penalty: f64,
    pub disc_minibatch: usize,
    pub disc_updates: usize,
    pub log_std_init: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            grad_clip: 50.0,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            disc_lr: 3e-4,
            epochs: 4,
            minibatch_size: 1024,
            kl_target: 0.03,
            distill_weight: 1.0,
            entropy_coef: 0.0,
            optimizer: OptimizerKind::Adam,
            amp_window: 10,
            disc_grad_penalty: 5.0,
            disc_minibatch: 256,
            disc_updates: 2,
            log_std_init: -1.0,
            log_std_min: -5.0,
            log_std_max: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::config("gamma", "must be in (0,1)"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("gae_lambda", "must be in [0,1]"));
        }
        if self.clip_eps <= 0.0 {
            return Err(Error::config("clip_eps", "must be positive"));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::config("grad_clip", "must be positive"));
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.amp_window == 0 {
            return Err(Error::config("amp_window", "must be positive"));
        }
        Ok(())
    }
}
