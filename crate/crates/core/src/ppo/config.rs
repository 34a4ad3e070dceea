use serde::{Deserialize, Serialize};

use crate::env::EPISODE_LENGTH;
use crate::error::{Error, Result};

/// Hyperparameters for demonstration-bootstrapped PPO. Defaults follow
/// the usual framework conventions; the loss weights are
/// `-alpha * surrogate + beta * value_mse - gamma_bc * demo_loglik`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoBcConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_bc: f64,
    pub epsilon_clip: f64,
    pub gamma_discount: f64,
    pub gae_lambda: f64,
    /// Parallel environment copies per iteration.
    pub n_envs: usize,
    /// Steps per copy per iteration (one episode length by default).
    pub n_steps: usize,
    pub ppo_batch_size: usize,
    pub bc_batch_size: usize,
    /// Optimization epochs over the rollout buffer per iteration.
    pub epochs: usize,
    pub max_grad_norm: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    /// Evaluate and snapshot the best parameters every this many iterations.
    pub snapshot_every: usize,
    pub snapshot_eval_rollouts: usize,
}

impl Default for PpoBcConfig {
    fn default() -> Self {
        let n_envs = 64;
        let n_steps = EPISODE_LENGTH as usize;
        PpoBcConfig {
            alpha: 1.0,
            beta: 0.5,
            gamma_bc: 0.1,
            epsilon_clip: 0.2,
            gamma_discount: 0.99,
            gae_lambda: 0.95,
            n_envs,
            n_steps,
            ppo_batch_size: n_envs * n_steps / 4,
            bc_batch_size: 32,
            epochs: 10,
            max_grad_norm: 5.0,
            entropy_coef: 0.0,
            learning_rate: 3e-4,
            snapshot_every: 10,
            snapshot_eval_rollouts: 20,
        }
    }
}

impl PpoBcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_clip > 0.0 && self.epsilon_clip < 1.0) {
            return Err(Error::contract("epsilon_clip must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.gamma_discount) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::contract(
                "gamma_discount and gae_lambda must be in [0, 1]",
            ));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma_bc < 0.0 || self.entropy_coef < 0.0 {
            return Err(Error::contract("loss weights must be >= 0"));
        }
        if self.n_envs == 0 || self.n_steps == 0 || self.ppo_batch_size == 0 || self.epochs == 0 {
            return Err(Error::contract("n_envs, n_steps, ppo_batch_size, epochs must be >= 1"));
        }
        if self.max_grad_norm <= 0.0 || self.learning_rate <= 0.0 {
            return Err(Error::contract("max_grad_norm and learning_rate must be > 0"));
        }
        if self.snapshot_every == 0 || self.snapshot_eval_rollouts == 0 {
            return Err(Error::contract("snapshot settings must be >= 1"));
        }
        Ok(())
    }

    pub fn steps_per_iteration(&self) -> u64 {
        (self.n_envs * self.n_steps) as u64
    }
}
