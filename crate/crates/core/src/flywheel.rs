//! Batched amortized data collection: the generalist's own rollouts
//! bootstrap the per-batch state policy, the human demonstrator is
//! queried only for environments the bootstrapped policy fails on, and
//! every batch's data is retained for distillation. Also the
//! scanned-deployment fine-tuning loop, which consumes no human
//! demonstrations at all.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, GeneralistAgent};
use crate::distill::{
    collect_teacher_trajectories, train_generalist, DistillConfig, StoredTrajectory,
    TrajectoryDataset,
};
use crate::env::{generate_env_family, EnvSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_generalist, rollout_episode};
use crate::expert::ScriptedExpert;
use crate::nnet::{GeneralistPolicy, StatePolicy};
use crate::ppo::{train_state_policy, PpoBcConfig};
use crate::rng;
use crate::trajectory::Trajectory;

pub const LEDGER_SCHEMA: &str = "ledger.v1";
pub const LEDGER_ENV_SCHEMA: &str = "ledger-env.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlywheelConfig {
    /// Environments per batch (K).
    pub batch_size_k: usize,
    /// Success threshold r: environments strictly below it fall back to
    /// human demonstrations.
    pub success_threshold_r: f64,
    /// Model-generated successes to collect per env before RL.
    pub model_demo_target: usize,
    pub model_demo_attempt_cap: usize,
    pub demos_per_env_human: usize,
    /// Env-step budget per RL training stage.
    pub rl_budget: u64,
    pub eval_rollouts_per_env: usize,
    /// Held-out environments used for the per-batch ledger evaluation.
    pub heldout_count: usize,
    /// Iteration cap for scanned-deployment fine-tuning.
    pub scan_max_iterations: usize,
}

impl Default for FlywheelConfig {
    fn default() -> Self {
        FlywheelConfig {
            batch_size_k: 5,
            success_threshold_r: 0.5,
            model_demo_target: 10,
            model_demo_attempt_cap: 100,
            demos_per_env_human: 10,
            rl_budget: 300_000,
            eval_rollouts_per_env: 20,
            heldout_count: 10,
            scan_max_iterations: 20,
        }
    }
}

impl FlywheelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size_k < 1 {
            return Err(Error::contract("batch_size_k must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.success_threshold_r) {
            return Err(Error::contract("success_threshold_r must be in [0, 1]"));
        }
        if self.eval_rollouts_per_env < 1 {
            return Err(Error::contract("eval_rollouts_per_env must be >= 1"));
        }
        if self.model_demo_attempt_cap < self.model_demo_target {
            return Err(Error::contract(
                "model_demo_attempt_cap must cover model_demo_target",
            ));
        }
        Ok(())
    }
}

/// One ledger row: the batch's demo accounting and evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_index: usize,
    pub env_ids: Vec<String>,
    pub human_demo_count: usize,
    pub model_demo_count: usize,
    /// Generalist rollout attempts made while collecting model demos (the
    /// compute proxy).
    pub model_demo_attempts: usize,
    pub rl_env_steps: u64,
    /// Success rate of the bootstrapped policy per env (aligned with
    /// `env_ids`; zero when the bootstrap stage was skipped).
    pub s1_success: Vec<f64>,
    pub failed_envs: Vec<String>,
    /// Environments moved into the failed set because dataset generation
    /// found the bootstrapped teacher too weak.
    pub retro_failed: Vec<String>,
    /// Held-out success of the distilled generalist after this batch.
    pub heldout_success: f64,
}

/// Keep exactly the trajectories whose terminal transition carries the
/// sparse reward, order preserved.
pub fn filter_successful_rollouts(trajectories: Vec<Trajectory>) -> Vec<Trajectory> {
    trajectories.into_iter().filter(|t| t.is_success()).collect()
}

/// Stochastic success rate per spec over fixed-seed rollouts.
pub fn stochastic_success_rates(
    policy: &StatePolicy,
    specs: &[EnvSpec],
    eval_rollouts: usize,
    seed: u64,
) -> Vec<f64> {
    let report = crate::eval::evaluate_state_policy(policy, "s1", specs, eval_rollouts, seed, false);
    report.per_env.iter().map(|e| e.rate()).collect()
}

/// Environments whose success rate under `agent` falls strictly below `r`.
pub fn failed_environments_agent(
    agent: &mut dyn Agent,
    specs: &[EnvSpec],
    r: f64,
    eval_rollouts: usize,
    seed: u64,
) -> BTreeSet<String> {
    let report = crate::eval::evaluate_agent(agent, "candidate", specs, eval_rollouts, seed);
    report
        .per_env
        .iter()
        .filter(|e| e.rate() < r)
        .map(|e| e.env_id.clone())
        .collect()
}

/// Environments where the state policy's stochastic success rate is
/// strictly below `r`.
pub fn failed_environments(
    policy: &StatePolicy,
    specs: &[EnvSpec],
    r: f64,
    eval_rollouts: usize,
    seed: u64,
) -> BTreeSet<String> {
    let mut agent = crate::agent::StatePolicyAgent::new(policy, false);
    failed_environments_agent(&mut agent, specs, r, eval_rollouts, seed)
}

/// Collect successful generalist rollouts on one spec, up to `target`
/// successes within `cap` attempts. Returns (successes, attempts made).
fn collect_model_demos(
    policy: &GeneralistPolicy,
    spec: &EnvSpec,
    target: usize,
    cap: usize,
    seed: u64,
) -> (Vec<Trajectory>, usize) {
    let mut agent = GeneralistAgent::new(policy, false);
    let mut successes = Vec::new();
    let mut attempts = 0;
    while successes.len() < target && attempts < cap {
        let outcome = rollout_episode(
            &mut agent,
            spec,
            rng::derive(seed, "model-demo", attempts as u64, 0),
            None,
        );
        attempts += 1;
        if outcome.success {
            successes.push(outcome.trajectory);
        }
    }
    (successes, attempts)
}

/// One batch of the amortized collection loop. Steps: (1) collect model
/// demos with the current generalist; (2) train the bootstrapped state
/// policy on all K envs; (3) find the failed set F; (4) query the human
/// demonstrator on F and train the fallback policy; (5) generate
/// distillation data with the appropriate teacher per env (environments
/// whose teacher proves too weak are retroactively moved into F);
/// (6) append to the cumulative dataset and retrain the generalist on all
/// data so far; (7) emit the ledger row.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    pi_g: &GeneralistPolicy,
    specs_batch: &[EnvSpec],
    expert: &mut ScriptedExpert,
    fly: &FlywheelConfig,
    ppo: &PpoBcConfig,
    distill_cfg: &DistillConfig,
    dataset: &mut TrajectoryDataset,
    heldout: &[EnvSpec],
    batch_index: usize,
    seed: u64,
) -> Result<(GeneralistPolicy, BatchRecord)> {
    fly.validate()?;
    let k = specs_batch.len();
    let env_ids: Vec<String> = specs_batch.iter().map(|s| s.env_id.clone()).collect();

    // (1) Model-generated demos from the current generalist.
    let mut model_demos: Vec<Trajectory> = Vec::new();
    let mut model_demo_attempts = 0;
    for (i, spec) in specs_batch.iter().enumerate() {
        let (demos, attempts) = collect_model_demos(
            pi_g,
            spec,
            fly.model_demo_target,
            fly.model_demo_attempt_cap,
            rng::derive(seed, "batch-model-demos", i as u64, 0),
        );
        model_demo_attempts += attempts;
        model_demos.extend(demos);
    }
    let model_demo_count = model_demos.len();

    // (2)-(3) Bootstrapped state policy and its failed set. With zero
    // model demos (the first batch), sparse-reward RL from scratch cannot
    // pass any threshold, so the stage is skipped and every env falls
    // back to the human demonstrator.
    let mut rl_env_steps = 0u64;
    let mut s1_success = vec![0.0; k];
    let mut failed: BTreeSet<String> = BTreeSet::new();
    let mut s1_policy: Option<StatePolicy> = None;
    if model_demo_count == 0 {
        failed.extend(env_ids.iter().cloned());
    } else {
        let result = train_state_policy(
            specs_batch,
            &model_demos,
            ppo,
            fly.rl_budget,
            rng::derive(seed, "batch-s1", 0, 0),
        )?;
        rl_env_steps += result.env_steps;
        let rates = stochastic_success_rates(
            &result.policy,
            specs_batch,
            fly.eval_rollouts_per_env,
            rng::derive(seed, "batch-threshold", 0, 0),
        );
        for (i, rate) in rates.iter().enumerate() {
            s1_success[i] = *rate;
            if *rate < fly.success_threshold_r {
                failed.insert(env_ids[i].clone());
            }
        }
        s1_policy = Some(result.policy);
    }

    // (5a) Distillation data from the bootstrapped teacher on passing
    // envs; failures are retroactively moved into F.
    let mut staged: BTreeMap<String, Vec<StoredTrajectory>> = BTreeMap::new();
    let mut retro_failed: Vec<String> = Vec::new();
    if let Some(s1) = &s1_policy {
        for (i, spec) in specs_batch.iter().enumerate() {
            if failed.contains(&spec.env_id) {
                continue;
            }
            match collect_teacher_trajectories(
                s1,
                spec,
                distill_cfg.per_env,
                distill_cfg.teacher_attempt_factor,
                rng::derive(seed, "batch-distill-s1", i as u64, 0),
            ) {
                Ok(trajs) => {
                    staged.insert(spec.env_id.clone(), trajs);
                }
                Err(Error::TeacherTooWeak { env_id, .. }) => {
                    retro_failed.push(env_id.clone());
                    failed.insert(env_id);
                }
                Err(other) => return Err(other),
            }
        }
    }

    // (4) Human fallback on the final failed set.
    let mut human_demos: Vec<Trajectory> = Vec::new();
    for (i, spec) in specs_batch.iter().enumerate() {
        if failed.contains(&spec.env_id) {
            human_demos.extend(expert.collect_demonstrations(
                spec,
                fly.demos_per_env_human,
                rng::derive(seed, "batch-human", i as u64, 0),
            )?);
        }
    }
    let human_demo_count = human_demos.len();

    // (5b) Fallback policy on F and its distillation data.
    if !failed.is_empty() {
        let failed_specs: Vec<EnvSpec> = specs_batch
            .iter()
            .filter(|s| failed.contains(&s.env_id))
            .cloned()
            .collect();
        let result = train_state_policy(
            &failed_specs,
            &human_demos,
            ppo,
            fly.rl_budget,
            rng::derive(seed, "batch-s2", 0, 0),
        )?;
        rl_env_steps += result.env_steps;
        for (i, spec) in failed_specs.iter().enumerate() {
            let trajs = collect_teacher_trajectories(
                &result.policy,
                spec,
                distill_cfg.per_env,
                distill_cfg.teacher_attempt_factor,
                rng::derive(seed, "batch-distill-s2", i as u64, 0),
            )?;
            staged.insert(spec.env_id.clone(), trajs);
        }
    }

    // (6) Commit the batch's data and retrain the generalist on the
    // cumulative dataset.
    for spec in specs_batch {
        let trajs = staged.remove(&spec.env_id).ok_or_else(|| {
            Error::contract(format!("no distillation data staged for {}", spec.env_id))
        })?;
        dataset.append(spec, &trajs)?;
    }
    let (new_pi_g, _) = train_generalist(pi_g, dataset, distill_cfg, rng::derive(seed, "batch-distill-train", 0, 0))?;

    // (7) Ledger row.
    let heldout_success = if heldout.is_empty() {
        0.0
    } else {
        evaluate_generalist(
            &new_pi_g,
            "pi_g",
            heldout,
            fly.eval_rollouts_per_env,
            rng::derive(seed, "batch-heldout", 0, 0),
            true,
        )
        .mean()
    };

    let record = BatchRecord {
        batch_index,
        env_ids,
        human_demo_count,
        model_demo_count,
        model_demo_attempts,
        rl_env_steps,
        s1_success,
        failed_envs: failed.into_iter().collect(),
        retro_failed,
        heldout_success,
    };
    Ok((new_pi_g, record))
}

/// Partition the family into consecutive batches of K and run them
/// sequentially, threading the generalist and the cumulative dataset.
/// Only full batches are processed. Fully deterministic per seed.
pub fn run_flywheel(
    family: &[EnvSpec],
    fly: &FlywheelConfig,
    ppo: &PpoBcConfig,
    distill_cfg: &DistillConfig,
    expert: &mut ScriptedExpert,
    dataset_dir: &Path,
    seed: u64,
) -> Result<(GeneralistPolicy, Vec<BatchRecord>)> {
    fly.validate()?;
    if family.len() < fly.batch_size_k {
        return Err(Error::contract("family smaller than one batch"));
    }
    let heldout = generate_env_family(fly.heldout_count, rng::derive(seed, "heldout-family", 0, 0))?;
    let mut dataset = TrajectoryDataset::open_or_create(dataset_dir)?;
    let mut pi_g = GeneralistPolicy::new(rng::derive(seed, "pi-g-init", 0, 0));
    let mut records = Vec::new();
    for (b, batch) in family.chunks_exact(fly.batch_size_k).enumerate() {
        let (next_pi_g, record) = run_batch(
            &pi_g,
            batch,
            expert,
            fly,
            ppo,
            distill_cfg,
            &mut dataset,
            &heldout,
            b + 1,
            rng::derive(seed, "batch", b as u64, 0),
        )?;
        pi_g = next_pi_g;
        records.push(record);
    }
    Ok((pi_g, records))
}

/// Scanned-deployment fine-tuning: repeatedly roll out the generalist on
/// the target twin, filter successes into an accumulating pool, train a
/// state policy bootstrapped with that pool, and distill it back into the
/// generalist with the encoder frozen, until the pool exceeds the target
/// size. Consumes no human demonstrations.
pub fn scanned_finetune(
    pi_g: &GeneralistPolicy,
    test_spec: &EnvSpec,
    fly: &FlywheelConfig,
    ppo: &PpoBcConfig,
    distill_cfg: &DistillConfig,
    work_dir: &Path,
    seed: u64,
) -> Result<GeneralistPolicy> {
    fly.validate()?;
    let specs = [test_spec.clone()];
    let mut pi = pi_g.clone();
    let original_frozen = pi.encoder_frozen;
    pi.encoder_frozen = true;
    let mut pool: Vec<Trajectory> = Vec::new();
    let mut finished = false;

    for iter in 0..fly.scan_max_iterations {
        if pool.len() > fly.model_demo_target {
            finished = true;
            break;
        }
        let mut agent = GeneralistAgent::new(&pi, false);
        let mut attempts = 0;
        while attempts < fly.model_demo_attempt_cap && pool.len() <= fly.model_demo_target {
            let outcome = rollout_episode(
                &mut agent,
                test_spec,
                rng::derive(seed, "scan-rollout", iter as u64, attempts as u64),
                None,
            );
            attempts += 1;
            if outcome.success {
                pool.push(outcome.trajectory);
            }
        }
        if iter == 0 && pool.is_empty() {
            return Err(Error::ZeroShotTooWeak {
                env_id: test_spec.env_id.clone(),
                attempts,
            });
        }

        let result = train_state_policy(
            &specs,
            &pool,
            ppo,
            fly.rl_budget,
            rng::derive(seed, "scan-rl", iter as u64, 0),
        )?;
        let trajs = collect_teacher_trajectories(
            &result.policy,
            test_spec,
            distill_cfg.per_env,
            distill_cfg.teacher_attempt_factor,
            rng::derive(seed, "scan-distill", iter as u64, 0),
        )?;
        let iter_dir = work_dir.join(format!("scan-iter-{iter}"));
        let mut ds = TrajectoryDataset::create(&iter_dir)?;
        ds.append(test_spec, &trajs)?;
        let (next, _) = train_generalist(&pi, &ds, distill_cfg, rng::derive(seed, "scan-gen", iter as u64, 0))?;
        pi = next;
        debug_assert!(pi.encoder_frozen);
    }
    if !finished && pool.len() <= fly.model_demo_target {
        return Err(Error::FinetuneStalled {
            env_id: test_spec.env_id.clone(),
            iterations: fly.scan_max_iterations,
            successes: pool.len(),
        });
    }
    pi.encoder_frozen = original_frozen;
    Ok(pi)
}

/// Ledger CSV: one row per batch, fixed column order.
pub fn write_ledger_csv(records: &[BatchRecord], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record([
        "batch_index",
        "env_ids",
        "human_demo_count",
        "model_demo_count",
        "model_demo_attempts",
        "rl_env_steps",
        "s1_success",
        "failed_envs",
        "retro_failed",
        "heldout_success",
    ])?;
    for r in records {
        w.write_record([
            r.batch_index.to_string(),
            r.env_ids.join(";"),
            r.human_demo_count.to_string(),
            r.model_demo_count.to_string(),
            r.model_demo_attempts.to_string(),
            r.rl_env_steps.to_string(),
            r.s1_success
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            r.failed_envs.join(";"),
            r.retro_failed.join(";"),
            r.heldout_success.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-(batch, env) success CSV companion to the ledger.
pub fn write_ledger_env_csv(records: &[BatchRecord], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record(["batch_index", "env_id", "s1_success", "in_failed_set", "retro_failed"])?;
    for r in records {
        for (env_id, rate) in r.env_ids.iter().zip(&r.s1_success) {
            w.write_record([
                r.batch_index.to_string(),
                env_id.clone(),
                rate.to_string(),
                r.failed_envs.contains(env_id).to_string(),
                r.retro_failed.contains(env_id).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
