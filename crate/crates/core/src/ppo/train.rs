use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::env::{reset, step, EnvSpec};
use crate::error::{Error, Result};
use crate::nnet::{adam_step, state_policy_input, AdamState, StatePolicy};
use crate::ppo::{collect_rollouts, compute_gae, ppo_bc_loss, DemoPair, PpoBcConfig};
use crate::rng;
use crate::trajectory::Trajectory;

pub const METRICS_SCHEMA: &str = "metrics.v1";

/// Per-iteration training metrics, written as one CSV row each.
#[derive(Debug, Clone)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub env_steps: u64,
    pub mean_episode_reward: f64,
    pub per_spec_success: Vec<f64>,
    pub surrogate: f64,
    pub value_loss: f64,
    pub bc_log_likelihood: f64,
    pub entropy: f64,
    pub snapshot_success: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters achieving the best evaluated mean success across specs.
    pub policy: StatePolicy,
    pub metrics: Vec<IterationMetrics>,
    pub env_steps: u64,
    pub best_success: f64,
}

/// Flatten demonstrations into policy-input/action pairs, attaching each
/// pair's spec encoding. Demos must reference known specs and in-range
/// actions.
pub fn demo_pairs_from_trajectories(
    specs: &[EnvSpec],
    demos: &[Trajectory],
) -> Result<Vec<DemoPair>> {
    let by_id: BTreeMap<&str, &EnvSpec> = specs.iter().map(|s| (s.env_id.as_str(), s)).collect();
    let mut pairs = Vec::new();
    for traj in demos {
        let spec = by_id.get(traj.env_id.as_str()).ok_or_else(|| {
            Error::DemoFormatError(format!("demo references unknown env {}", traj.env_id))
        })?;
        for t in &traj.transitions {
            if t.action >= crate::env::ACTION_COUNT {
                return Err(Error::DemoFormatError(format!(
                    "demo action {} out of range in {}",
                    t.action, traj.env_id
                )));
            }
            pairs.push(DemoPair {
                input: state_policy_input(spec, &t.state),
                action: t.action,
            });
        }
    }
    Ok(pairs)
}

/// Deterministic argmax evaluation used for best-snapshot selection.
/// Returns (mean success over specs, per-spec success).
pub(crate) fn argmax_success(
    policy: &StatePolicy,
    specs: &[EnvSpec],
    rollouts: usize,
    seed: u64,
) -> (f64, Vec<f64>) {
    let per_spec: Vec<f64> = specs
        .par_iter()
        .enumerate()
        .map(|(s_idx, spec)| {
            let mut successes = 0;
            for j in 0..rollouts {
                let episode_seed = rng::derive(seed, "snapshot-episode", s_idx as u64, j as u64);
                let mut state = reset(spec, episode_seed);
                loop {
                    let input = state_policy_input(spec, &state);
                    let action = policy.argmax_action(&input);
                    let (next, reward, done) = step(spec, &state, action).expect("valid action");
                    state = next;
                    if done {
                        if reward == 1.0 {
                            successes += 1;
                        }
                        break;
                    }
                }
            }
            successes as f64 / rollouts as f64
        })
        .collect();
    let mean = per_spec.iter().sum::<f64>() / per_spec.len() as f64;
    (mean, per_spec)
}

/// Iterate collect -> GAE -> epochs of minibatch updates until the env-step
/// budget is exhausted; returns the best-evaluated snapshot. Deterministic
/// per seed.
pub fn train_state_policy(
    specs: &[EnvSpec],
    demos: &[Trajectory],
    cfg: &PpoBcConfig,
    budget: u64,
    seed: u64,
) -> Result<TrainResult> {
    cfg.validate()?;
    if specs.is_empty() {
        return Err(Error::contract("train_state_policy needs at least one spec"));
    }
    let pool = demo_pairs_from_trajectories(specs, demos)?;

    let mut policy = StatePolicy::new(rng::derive(seed, "policy-init", 0, 0));
    let mut adam_actor = AdamState::new(policy.actor.len());
    let mut adam_critic = AdamState::new(policy.critic.len());
    let mut update_rng = rng::rng(seed, "updates", 0, 0);
    let snapshot_seed = rng::derive(seed, "snapshot-eval", 0, 0);

    let iter_size = cfg.steps_per_iteration();
    let mut env_steps: u64 = 0;
    let mut iteration = 0usize;
    let mut metrics = Vec::new();
    let mut best: Option<(f64, StatePolicy)> = None;

    while env_steps + iter_size <= budget {
        iteration += 1;
        let buffer = collect_rollouts(
            &policy,
            specs,
            cfg,
            rng::derive(seed, "collect", iteration as u64, 0),
        );
        env_steps += iter_size;
        let adv = compute_gae(&buffer, cfg);

        let mut term_sums = [0.0f64; 4];
        let mut updates = 0usize;
        for _ in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..buffer.len()).collect();
            order.shuffle(&mut update_rng);
            for mb in order.chunks(cfg.ppo_batch_size) {
                let demo_mb: Vec<&DemoPair> = if pool.is_empty() || cfg.gamma_bc == 0.0 {
                    Vec::new()
                } else {
                    (0..cfg.bc_batch_size)
                        .map(|_| &pool[update_rng.random_range(0..pool.len())])
                        .collect()
                };
                let (terms, grad_actor, grad_critic) =
                    ppo_bc_loss(&policy, &buffer, &adv, mb, &demo_mb, cfg)?;
                adam_step(&mut policy.actor, &grad_actor, &mut adam_actor, cfg.learning_rate);
                adam_step(&mut policy.critic, &grad_critic, &mut adam_critic, cfg.learning_rate);
                term_sums[0] += terms.surrogate;
                term_sums[1] += terms.value;
                term_sums[2] += terms.bc_log_likelihood;
                term_sums[3] += terms.entropy;
                updates += 1;
            }
        }

        let is_last = env_steps + iter_size > budget;
        let snapshot_success = if iteration % cfg.snapshot_every == 0 || is_last {
            let (mean, _) = argmax_success(&policy, specs, cfg.snapshot_eval_rollouts, snapshot_seed);
            if best.as_ref().map(|(b, _)| mean > *b).unwrap_or(true) {
                best = Some((mean, policy.clone()));
            }
            Some(mean)
        } else {
            None
        };

        let u = updates.max(1) as f64;
        metrics.push(IterationMetrics {
            iteration,
            env_steps,
            mean_episode_reward: buffer.mean_episode_reward(),
            per_spec_success: buffer.per_spec_success(),
            surrogate: term_sums[0] / u,
            value_loss: term_sums[1] / u,
            bc_log_likelihood: term_sums[2] / u,
            entropy: term_sums[3] / u,
            snapshot_success,
        });
    }

    let (best_success, best_policy) = best.unwrap_or((0.0, policy));
    Ok(TrainResult {
        policy: best_policy,
        metrics,
        env_steps,
        best_success,
    })
}

/// Write the per-iteration metrics stream. Per-spec success rates are
/// semicolon-joined in spec order.
pub fn write_metrics_csv(metrics: &[IterationMetrics], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record([
        "iteration",
        "env_steps",
        "mean_episode_reward",
        "surrogate",
        "value_loss",
        "bc_log_likelihood",
        "entropy",
        "snapshot_success",
        "per_spec_success",
    ])?;
    for m in metrics {
        w.write_record([
            m.iteration.to_string(),
            m.env_steps.to_string(),
            m.mean_episode_reward.to_string(),
            m.surrogate.to_string(),
            m.value_loss.to_string(),
            m.bc_log_likelihood.to_string(),
            m.entropy.to_string(),
            m.snapshot_success.map(|v| v.to_string()).unwrap_or_default(),
            m.per_spec_success
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
