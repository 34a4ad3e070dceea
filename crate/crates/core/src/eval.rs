//! Standardized evaluation: success rates with fixed per-(env, rollout)
//! seeds, disturbance robustness, multi-object extrapolation, and the
//! scaling-law report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, GeneralistAgent, StatePolicyAgent};
use crate::env::{
    inject_disturbance, render_observation, reset, step, EnvSpec, ObsGrid, WorldState,
    EPISODE_LENGTH, HOME, OBS_GRID_LEN,
};
use crate::error::{Error, Result};
use crate::geom::{point_in_any_interior, Point};
use crate::grid::{cell_of, OccupancyGrid};
use crate::nnet::{GeneralistPolicy, StatePolicy};
use crate::rng;
use crate::trajectory::{Trajectory, Transition};

pub const EVAL_SCHEMA: &str = "eval.v1";
pub const SCALING_SCHEMA: &str = "scaling.v1";
pub const MULTI_OBJECT_SCHEMA: &str = "multi-object.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Standard,
    Disturbance,
    MultiObject,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Standard => "standard",
            EvalMode::Disturbance => "disturbance",
            EvalMode::MultiObject => "multi_object",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvEval {
    pub env_id: String,
    pub successes: usize,
    pub rollouts: usize,
}

impl EnvEval {
    pub fn rate(&self) -> f64 {
        if self.rollouts == 0 {
            0.0
        } else {
            self.successes as f64 / self.rollouts as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        let p = self.rate();
        if self.rollouts == 0 {
            0.0
        } else {
            (p * (1.0 - p) / self.rollouts as f64).sqrt()
        }
    }
}

/// Success-rate report over a set of environments.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub policy_id: String,
    pub mode: EvalMode,
    pub rollouts_per_env: usize,
    pub per_env: Vec<EnvEval>,
    /// Number of rollouts in which a disturbance was actually applied
    /// (`Some` only in disturbance mode; skipped when the object was held).
    pub disturbances_applied: Option<usize>,
}

impl EvalReport {
    pub fn total_successes(&self) -> usize {
        self.per_env.iter().map(|e| e.successes).sum()
    }

    pub fn total_rollouts(&self) -> usize {
        self.per_env.iter().map(|e| e.rollouts).sum()
    }

    /// Aggregate success rate: integer successes over integer rollouts.
    pub fn mean(&self) -> f64 {
        let n = self.total_rollouts();
        if n == 0 {
            0.0
        } else {
            self.total_successes() as f64 / n as f64
        }
    }

    /// Binomial standard error sqrt(p * (1 - p) / n).
    pub fn stderr(&self) -> f64 {
        let n = self.total_rollouts();
        if n == 0 {
            0.0
        } else {
            let p = self.mean();
            (p * (1.0 - p) / n as f64).sqrt()
        }
    }
}

/// One evaluated episode.
pub struct EpisodeOutcome {
    pub success: bool,
    pub trajectory: Trajectory,
    pub disturbance_applied: bool,
}

/// Run a single episode under `agent`. An optional `(step, seed)` pair
/// injects one disturbance at that step when the object is not held.
pub fn rollout_episode(
    agent: &mut dyn Agent,
    spec: &EnvSpec,
    episode_seed: u64,
    disturbance: Option<(u32, u64)>,
) -> EpisodeOutcome {
    let mut state = reset(spec, episode_seed);
    agent.begin_episode(spec, episode_seed);
    let empty_obs = ObsGrid {
        grid: vec![0.0; OBS_GRID_LEN],
        robot: [0.0; 3],
    };
    let mut transitions = Vec::new();
    let mut disturbance_applied = false;
    let mut success = false;
    loop {
        if let Some((d_step, d_seed)) = disturbance {
            if state.step_count == d_step && !disturbance_applied && !state.carried {
                state = inject_disturbance(spec, &state, d_seed).expect("object not carried");
                disturbance_applied = true;
            }
        }
        let obs = if agent.needs_observation() {
            render_observation(spec, &state, None)
        } else {
            empty_obs.clone()
        };
        let action = agent.act(spec, &state, &obs);
        let (next, reward, done) = step(spec, &state, action).expect("agent action in range");
        transitions.push(Transition {
            state,
            action,
            reward,
            done,
        });
        state = next;
        if done {
            success = reward == 1.0;
            break;
        }
    }
    EpisodeOutcome {
        success,
        trajectory: Trajectory {
            env_id: spec.env_id.clone(),
            episode_seed,
            transitions,
        },
        disturbance_applied,
    }
}

/// Evaluate an agent over fixed per-(env, rollout) episode seeds.
pub fn evaluate_agent(
    agent: &mut dyn Agent,
    policy_id: &str,
    specs: &[EnvSpec],
    rollouts_per_env: usize,
    seed: u64,
) -> EvalReport {
    assert!(rollouts_per_env >= 1);
    let per_env = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut successes = 0;
            for j in 0..rollouts_per_env {
                let episode_seed = rng::derive(seed, "eval-episode", i as u64, j as u64);
                if rollout_episode(agent, spec, episode_seed, None).success {
                    successes += 1;
                }
            }
            EnvEval {
                env_id: spec.env_id.clone(),
                successes,
                rollouts: rollouts_per_env,
            }
        })
        .collect();
    EvalReport {
        policy_id: policy_id.into(),
        mode: EvalMode::Standard,
        rollouts_per_env,
        per_env,
        disturbances_applied: None,
    }
}

/// State-policy evaluation; `deterministic_actions` selects argmax vs
/// sampled actions.
pub fn evaluate_state_policy(
    policy: &StatePolicy,
    policy_id: &str,
    specs: &[EnvSpec],
    rollouts_per_env: usize,
    seed: u64,
    deterministic_actions: bool,
) -> EvalReport {
    let mut agent = StatePolicyAgent::new(policy, deterministic_actions);
    evaluate_agent(&mut agent, policy_id, specs, rollouts_per_env, seed)
}

pub fn evaluate_generalist(
    policy: &GeneralistPolicy,
    policy_id: &str,
    specs: &[EnvSpec],
    rollouts_per_env: usize,
    seed: u64,
    deterministic_actions: bool,
) -> EvalReport {
    let mut agent = GeneralistAgent::new(policy, deterministic_actions);
    evaluate_agent(&mut agent, policy_id, specs, rollouts_per_env, seed)
}

/// Standard rollouts with one disturbance injected at `disturbance_step`
/// whenever the object is not yet held at that step.
pub fn evaluate_disturbance(
    agent: &mut dyn Agent,
    policy_id: &str,
    spec: &EnvSpec,
    rollouts: usize,
    disturbance_step: u32,
    seed: u64,
) -> Result<EvalReport> {
    if disturbance_step >= EPISODE_LENGTH {
        return Err(Error::contract("disturbance_step must precede episode end"));
    }
    let mut successes = 0;
    let mut applied = 0;
    for j in 0..rollouts {
        let episode_seed = rng::derive(seed, "eval-episode", 0, j as u64);
        let d_seed = rng::derive(seed, "disturb", 0, j as u64);
        let outcome = rollout_episode(agent, spec, episode_seed, Some((disturbance_step, d_seed)));
        if outcome.success {
            successes += 1;
        }
        if outcome.disturbance_applied {
            applied += 1;
        }
    }
    Ok(EvalReport {
        policy_id: policy_id.into(),
        mode: EvalMode::Disturbance,
        rollouts_per_env: rollouts,
        per_env: vec![EnvEval {
            env_id: spec.env_id.clone(),
            successes,
            rollouts,
        }],
        disturbances_applied: Some(applied),
    })
}

/// Multi-object protocol result.
#[derive(Debug, Clone)]
pub struct MultiObjectReport {
    pub env_id: String,
    pub n_objects: usize,
    pub episode_budget: usize,
    pub placed: usize,
    /// For k = 1..=n_objects: the episode count consumed when the k-th
    /// object was placed, if it was.
    pub episodes_used: Vec<Option<usize>>,
}

/// Sequential multi-object evaluation: each episode targets the unplaced
/// object nearest the home position; the remaining objects are rendered
/// as extra markers in the object channel. Placed objects leave the
/// scene.
pub fn evaluate_multi_object(
    agent: &mut dyn Agent,
    spec: &EnvSpec,
    n_objects: usize,
    episodes: usize,
    seed: u64,
) -> Result<MultiObjectReport> {
    assert!(n_objects >= 1 && episodes >= 1);
    let mut remaining = sample_object_positions(spec, n_objects, seed)?;
    let mut placed = 0;
    let mut episodes_used = vec![None; n_objects];
    for ep in 1..=episodes {
        if remaining.is_empty() {
            break;
        }
        // Target the nearest unplaced object.
        let target_idx = (0..remaining.len())
            .min_by(|a, b| {
                HOME.dist(remaining[*a])
                    .partial_cmp(&HOME.dist(remaining[*b]))
                    .unwrap()
            })
            .unwrap();
        let target = remaining[target_idx];
        let mut state = WorldState {
            ee_pos: HOME,
            object_pos: target,
            carried: false,
            gripper_open: true,
            step_count: 0,
        };
        agent.begin_episode(spec, rng::derive(seed, "mo-agent", ep as u64, 0));
        let mut success = false;
        loop {
            let mut obs = render_observation(spec, &state, None);
            for (i, p) in remaining.iter().enumerate() {
                if i != target_idx {
                    obs.add_object_marker(*p);
                }
            }
            let action = agent.act(spec, &state, &obs);
            let (next, reward, done) = step(spec, &state, action)?;
            state = next;
            if done {
                success = reward == 1.0;
                break;
            }
        }
        if success {
            remaining.remove(target_idx);
            placed += 1;
            episodes_used[placed - 1] = Some(ep);
        }
    }
    Ok(MultiObjectReport {
        env_id: spec.env_id.clone(),
        n_objects,
        episode_budget: episodes,
        placed,
        episodes_used,
    })
}

/// Non-overlapping, reachable, collision-free object starts away from the
/// goal site.
fn sample_object_positions(spec: &EnvSpec, n_objects: usize, seed: u64) -> Result<Vec<Point>> {
    use crate::env::spec_limits::{MAX_TOTAL_PATH_HOPS, MIN_OBJECT_GOAL_SEPARATION};
    use rand::Rng;
    let grid = spec.occupancy();
    let none = OccupancyGrid::no_extra_blocked();
    let from_home = grid.distance_field(cell_of(HOME), &none);
    let from_goal = grid.distance_field(cell_of(spec.goal_site.center), &none);
    let mut r = rng::rng(seed, "multi-object-starts", 0, 0);
    let mut points: Vec<Point> = Vec::with_capacity(n_objects);
    let mut attempts = 0;
    while points.len() < n_objects {
        attempts += 1;
        if attempts > 500 {
            return Err(Error::Infeasible);
        }
        let p = Point::new(r.random_range(0.1..0.9), r.random_range(0.1..0.9));
        let cell = cell_of(p);
        // Same feasibility rule as generation: the round trip home ->
        // object -> goal must fit the episode budget.
        let budget_ok = match (from_home[cell.index()], from_goal[cell.index()]) {
            (Some(dh), Some(dg)) => dh + dg <= MAX_TOTAL_PATH_HOPS,
            _ => false,
        };
        let ok = budget_ok
            && !point_in_any_interior(&spec.obstacles, p)
            && grid.is_free(cell)
            && p.dist(spec.goal_site.center) >= MIN_OBJECT_GOAL_SEPARATION
            && points.iter().all(|q| q.dist(p) >= 0.1);
        if ok {
            points.push(p);
        }
    }
    Ok(points)
}

/// A `(training env count, held-out success)` curve row.
#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub env_count: usize,
    pub mean_success: f64,
    pub stderr: f64,
}

/// Evaluate each checkpoint on the same held-out set with identical
/// seeds; rows sorted by training env count. Needs at least two
/// checkpoints to form a curve.
pub fn scaling_report(
    checkpoints: &[(usize, &GeneralistPolicy)],
    heldout: &[EnvSpec],
    rollouts_per_env: usize,
    seed: u64,
    deterministic_actions: bool,
) -> Result<Vec<ScalingRow>> {
    if checkpoints.len() < 2 {
        return Err(Error::contract("scaling_report needs at least 2 checkpoints"));
    }
    let mut rows: Vec<ScalingRow> = checkpoints
        .iter()
        .map(|(env_count, policy)| {
            let report = evaluate_generalist(
                policy,
                &format!("envs-{env_count}"),
                heldout,
                rollouts_per_env,
                seed,
                deterministic_actions,
            );
            ScalingRow {
                env_count: *env_count,
                mean_success: report.mean(),
                stderr: report.stderr(),
            }
        })
        .collect();
    rows.sort_by_key(|r| r.env_count);
    Ok(rows)
}

/// Per-env rows plus one `__mean__` aggregate row.
pub fn write_eval_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record([
        "policy_id",
        "mode",
        "env_id",
        "rollouts",
        "successes",
        "rate",
        "stderr",
        "disturbances_applied",
    ])?;
    let applied = report
        .disturbances_applied
        .map(|v| v.to_string())
        .unwrap_or_default();
    for e in &report.per_env {
        w.write_record([
            report.policy_id.clone(),
            report.mode.as_str().into(),
            e.env_id.clone(),
            e.rollouts.to_string(),
            e.successes.to_string(),
            e.rate().to_string(),
            e.stderr().to_string(),
            applied.clone(),
        ])?;
    }
    w.write_record([
        report.policy_id.clone(),
        report.mode.as_str().into(),
        "__mean__".into(),
        report.total_rollouts().to_string(),
        report.total_successes().to_string(),
        report.mean().to_string(),
        report.stderr().to_string(),
        applied,
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_scaling_csv(rows: &[ScalingRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record(["env_count", "mean_success", "stderr"])?;
    for r in rows {
        w.write_record([
            r.env_count.to_string(),
            r.mean_success.to_string(),
            r.stderr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_multi_object_csv(report: &MultiObjectReport, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record(["env_id", "objects_placed_k", "placed", "episodes_used", "episode_budget"])?;
    for k in 1..=report.n_objects {
        w.write_record([
            report.env_id.clone(),
            k.to_string(),
            (report.placed >= k).to_string(),
            report.episodes_used[k - 1]
                .map(|v| v.to_string())
                .unwrap_or_default(),
            report.episode_budget.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{ConstantAgent, RandomAgent};
    use crate::env::generate_env_family;
    use crate::expert::{ExpertAgent, ExpertConfig};

    #[test]
    fn expert_scores_one_everywhere() {
        let specs = generate_env_family(5, 157).unwrap();
        let mut agent = ExpertAgent::new(ExpertConfig::default());
        let report = evaluate_agent(&mut agent, "expert", &specs, 6, 3);
        assert_eq!(report.mean(), 1.0);
        assert_eq!(report.stderr(), 0.0);
        for e in &report.per_env {
            assert_eq!(e.rate(), 1.0);
        }
    }

    #[test]
    fn random_policy_rarely_succeeds() {
        let specs = generate_env_family(5, 163).unwrap();
        let mut agent = RandomAgent::new();
        let report = evaluate_agent(&mut agent, "random", &specs, 20, 4);
        assert!(report.mean() <= 0.05, "random baseline at {}", report.mean());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let specs = generate_env_family(3, 167).unwrap();
        let policy = StatePolicy::new(4);
        let a = evaluate_state_policy(&policy, "p", &specs, 10, 7, false);
        let b = evaluate_state_policy(&policy, "p", &specs, 10, 7, false);
        for (x, y) in a.per_env.iter().zip(&b.per_env) {
            assert_eq!(x.successes, y.successes);
        }
    }

    #[test]
    fn evaluation_does_not_mutate_parameters() {
        let specs = generate_env_family(2, 173).unwrap();
        let policy = GeneralistPolicy::new(9);
        let before_encoder = policy.encoder.clone();
        let before_head = policy.head.clone();
        let _ = evaluate_generalist(&policy, "g", &specs, 5, 1, true);
        assert_eq!(policy.encoder, before_encoder);
        assert_eq!(policy.head, before_head);
    }

    #[test]
    fn disturbance_applies_and_expert_recovers() {
        let specs = generate_env_family(4, 179).unwrap();
        for spec in &specs {
            let mut agent = ExpertAgent::new(ExpertConfig::default());
            let report = evaluate_disturbance(&mut agent, "expert", spec, 8, 10, 5).unwrap();
            assert_eq!(report.mean(), 1.0, "expert failed under disturbance on {}", spec.env_id);
            // Object moved at step 10 in any rollout where it was not yet held.
            assert!(report.disturbances_applied.unwrap() > 0);
        }
    }

    #[test]
    fn constant_action_agent_scores_zero() {
        let specs = generate_env_family(3, 181).unwrap();
        let mut agent = ConstantAgent(crate::env::ACTION_POS_X);
        let report = evaluate_agent(&mut agent, "constant", &specs, 5, 2);
        assert_eq!(report.mean(), 0.0);
    }

    #[test]
    fn multi_object_expert_places_all_three() {
        let specs = generate_env_family(6, 191).unwrap();
        for spec in &specs {
            let mut agent = ExpertAgent::new(ExpertConfig::default());
            let report = evaluate_multi_object(&mut agent, spec, 3, 6, 9).unwrap();
            assert_eq!(report.placed, 3, "expert placed {} on {}", report.placed, spec.env_id);
            assert_eq!(report.episodes_used, vec![Some(1), Some(2), Some(3)]);
        }
    }

    #[test]
    fn multi_object_single_reduces_to_standard() {
        let specs = generate_env_family(1, 193).unwrap();
        let mut agent = ExpertAgent::new(ExpertConfig::default());
        let report = evaluate_multi_object(&mut agent, &specs[0], 1, 3, 9).unwrap();
        assert_eq!(report.placed, 1);
    }

    #[test]
    fn scaling_report_needs_two_checkpoints_and_sorts() {
        let specs = generate_env_family(2, 197).unwrap();
        let a = GeneralistPolicy::new(1);
        let b = GeneralistPolicy::new(2);
        assert!(scaling_report(&[(4, &a)], &specs, 2, 1, true).is_err());
        let rows = scaling_report(&[(16, &a), (4, &b), (8, &a)], &specs, 2, 1, true).unwrap();
        let counts: Vec<usize> = rows.iter().map(|r| r.env_count).collect();
        assert_eq!(counts, vec![4, 8, 16]);
        // Identical policy evaluated twice gives identical rates.
        assert_eq!(rows[1].mean_success, rows[2].mean_success);
    }
}
