//! Demonstration-bootstrapped policy optimization: vectorized rollout
//! collection, generalized advantage estimation, and a clipped-surrogate
//! objective with value regression and a behavior-cloning
//! maximum-likelihood term over demonstration pairs.

mod config;
mod gae;
mod loss;
mod rollout;
mod train;

pub use config::PpoBcConfig;
pub use gae::{compute_gae, AdvantageEstimate};
pub use loss::{clipped_surrogate, ppo_bc_loss, DemoPair, LossTerms};
pub use rollout::{collect_rollouts, RolloutBuffer, RolloutEntry};
pub use train::{
    demo_pairs_from_trajectories, train_state_policy, write_metrics_csv, IterationMetrics,
    TrainResult, METRICS_SCHEMA,
};
