use rand::Rng;
use rayon::prelude::*;

use crate::env::{reset, step, EnvSpec};
use crate::nnet::{state_policy_input, StatePolicy};
use crate::ppo::PpoBcConfig;
use crate::rng;

/// One stored step: the policy input built at collection time, the
/// sampled action with its log-probability under the collecting snapshot,
/// and the value estimate.
#[derive(Debug, Clone)]
pub struct RolloutEntry {
    pub input: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub value: f64,
    pub old_log_prob: f64,
}

/// Fixed-size on-policy buffer, env-major: entry `e * n_steps + t`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub n_steps: usize,
    pub entries: Vec<RolloutEntry>,
    /// Value of the state following the last stored step, per env copy
    /// (zero when that step terminated).
    pub bootstrap_values: Vec<f64>,
    /// Spec index assigned to each env copy (round-robin).
    pub spec_of_env: Vec<usize>,
    /// (episodes finished, successes) per spec index.
    pub per_spec_episodes: Vec<(usize, usize)>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean_episode_reward(&self) -> f64 {
        let (episodes, successes) = self
            .per_spec_episodes
            .iter()
            .fold((0, 0), |(e, s), (pe, ps)| (e + pe, s + ps));
        if episodes == 0 {
            0.0
        } else {
            successes as f64 / episodes as f64
        }
    }

    pub fn per_spec_success(&self) -> Vec<f64> {
        self.per_spec_episodes
            .iter()
            .map(|(e, s)| if *e == 0 { 0.0 } else { *s as f64 / *e as f64 })
            .collect()
    }
}

/// Roll the stochastic policy in `n_envs` copies for `n_steps` each.
/// Copies are assigned specs round-robin and auto-reset on done. Each
/// copy draws from its own derived stream, so the result is identical for
/// any parallelism degree.
pub fn collect_rollouts(
    policy: &StatePolicy,
    specs: &[EnvSpec],
    cfg: &PpoBcConfig,
    seed: u64,
) -> RolloutBuffer {
    assert!(!specs.is_empty(), "collect_rollouts needs at least one spec");
    let n_envs = cfg.n_envs;
    let n_steps = cfg.n_steps;

    struct CopyResult {
        entries: Vec<RolloutEntry>,
        bootstrap: f64,
        episodes: usize,
        successes: usize,
    }

    let results: Vec<CopyResult> = (0..n_envs)
        .into_par_iter()
        .map(|e| {
            let spec = &specs[e % specs.len()];
            let mut r = rng::rng(seed, "rollout-copy", e as u64, 0);
            let mut state = reset(spec, r.random());
            let mut entries = Vec::with_capacity(n_steps);
            let mut episodes = 0;
            let mut successes = 0;
            let mut last_done = false;
            for _ in 0..n_steps {
                let input = state_policy_input(spec, &state);
                let (action, old_log_prob) = policy.sample_action(&input, &mut r);
                let value = policy.value(&input);
                let (next, reward, done) = step(spec, &state, action).expect("sampled action valid");
                entries.push(RolloutEntry {
                    input,
                    action,
                    reward,
                    done,
                    value,
                    old_log_prob,
                });
                last_done = done;
                if done {
                    episodes += 1;
                    if reward == 1.0 {
                        successes += 1;
                    }
                    state = reset(spec, r.random());
                } else {
                    state = next;
                }
            }
            let bootstrap = if last_done {
                0.0
            } else {
                policy.value(&state_policy_input(spec, &state))
            };
            CopyResult {
                entries,
                bootstrap,
                episodes,
                successes,
            }
        })
        .collect();

    let mut entries = Vec::with_capacity(n_envs * n_steps);
    let mut bootstrap_values = Vec::with_capacity(n_envs);
    let mut spec_of_env = Vec::with_capacity(n_envs);
    let mut per_spec_episodes = vec![(0, 0); specs.len()];
    for (e, res) in results.into_iter().enumerate() {
        entries.extend(res.entries);
        bootstrap_values.push(res.bootstrap);
        let s = e % specs.len();
        spec_of_env.push(s);
        per_spec_episodes[s].0 += res.episodes;
        per_spec_episodes[s].1 += res.successes;
    }
    RolloutBuffer {
        n_envs,
        n_steps,
        entries,
        bootstrap_values,
        spec_of_env,
        per_spec_episodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_env_family;
    use crate::nnet::log_softmax;

    #[test]
    fn buffer_has_exact_size_and_round_robin_assignment() {
        let specs = generate_env_family(3, 71).unwrap();
        let policy = StatePolicy::new(0);
        let cfg = PpoBcConfig {
            n_envs: 8,
            n_steps: 30,
            ..Default::default()
        };
        let buffer = collect_rollouts(&policy, &specs, &cfg, 5);
        assert_eq!(buffer.len(), 8 * 30);
        // 8 copies over 3 specs: occupancy differs by at most one.
        let mut counts = [0usize; 3];
        for s in &buffer.spec_of_env {
            counts[*s] += 1;
        }
        let max = *counts.iter().max().unwrap();
        let min = *counts.iter().min().unwrap();
        assert!(max - min <= 1);
    }

    #[test]
    fn stored_log_probs_match_recomputation() {
        let specs = generate_env_family(2, 73).unwrap();
        let policy = StatePolicy::new(1);
        let cfg = PpoBcConfig {
            n_envs: 4,
            n_steps: 20,
            ..Default::default()
        };
        let buffer = collect_rollouts(&policy, &specs, &cfg, 9);
        for entry in &buffer.entries {
            let logits = policy.logits(&entry.input);
            let recomputed = log_softmax(&logits)[entry.action];
            assert!((recomputed - entry.old_log_prob).abs() <= 1e-10);
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let specs = generate_env_family(2, 79).unwrap();
        let policy = StatePolicy::new(2);
        let cfg = PpoBcConfig {
            n_envs: 6,
            n_steps: 15,
            ..Default::default()
        };
        let a = collect_rollouts(&policy, &specs, &cfg, 3);
        let b = collect_rollouts(&policy, &specs, &cfg, 3);
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.input, y.input);
            assert_eq!(x.action, y.action);
            assert_eq!(x.old_log_prob, y.old_log_prob);
        }
        assert_eq!(a.bootstrap_values, b.bootstrap_values);
    }
}
