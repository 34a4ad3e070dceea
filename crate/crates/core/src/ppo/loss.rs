use rayon::prelude::*;

use crate::env::ACTION_COUNT;
use crate::error::{Error, Result};
use crate::nnet::{
    clip_gradients_joint, entropy, log_softmax, mlp_backward, ParamVector, StatePolicy,
};
use crate::ppo::{AdvantageEstimate, PpoBcConfig, RolloutBuffer};

/// Accumulation chunk size. Gradients are reduced chunk-by-chunk in index
/// order, so results are bitwise identical for any parallelism degree.
const GRAD_CHUNK: usize = 64;

/// One demonstration pair: the policy input built from the stored state
/// (with its spec encoding attached) and the demonstrated action.
#[derive(Debug, Clone)]
pub struct DemoPair {
    pub input: Vec<f64>,
    pub action: usize,
}

/// Loss components of one update, reported as minibatch means.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    /// Full minimized objective.
    pub total: f64,
    /// Mean clipped surrogate (maximized, so it enters `total` negated).
    pub surrogate: f64,
    /// Mean squared value error.
    pub value: f64,
    /// Mean demo log-likelihood (zero when no demo batch).
    pub bc_log_likelihood: f64,
    pub entropy: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
}

/// PPO's pessimistic surrogate: min(ratio * A, clip(ratio) * A).
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

struct ChunkAccum {
    surrogate: f64,
    value: f64,
    entropy: f64,
    grad_actor: ParamVector,
    grad_critic: ParamVector,
}

/// Evaluate the demonstration-bootstrapped PPO objective on one rollout
/// minibatch plus a demo minibatch, returning loss terms and clipped
/// gradients for actor and critic. Advantages are normalized per
/// minibatch.
pub fn ppo_bc_loss(
    policy: &StatePolicy,
    buffer: &RolloutBuffer,
    advantages: &AdvantageEstimate,
    minibatch: &[usize],
    demo_minibatch: &[&DemoPair],
    cfg: &PpoBcConfig,
) -> Result<(LossTerms, ParamVector, ParamVector)> {
    assert!(!minibatch.is_empty());
    let n = minibatch.len() as f64;
    let mean: f64 = minibatch.iter().map(|&i| advantages.advantages[i]).sum::<f64>() / n;
    let var: f64 = minibatch
        .iter()
        .map(|&i| {
            let d = advantages.advantages[i] - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.max(0.0).sqrt();

    let chunks: Vec<ChunkAccum> = minibatch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = ChunkAccum {
                surrogate: 0.0,
                value: 0.0,
                entropy: 0.0,
                grad_actor: ParamVector::zeros(policy.actor.len()),
                grad_critic: ParamVector::zeros(policy.critic.len()),
            };
            let mut dlogits = vec![0.0; ACTION_COUNT];
            for &i in chunk {
                let entry = &buffer.entries[i];
                let adv = (advantages.advantages[i] - mean) / (std + 1e-8);

                let (logits, cache) = policy.logits_cached(&entry.input);
                let logps = log_softmax(&logits);
                let probs: Vec<f64> = logps.iter().map(|l| l.exp()).collect();
                let ratio = (logps[entry.action] - entry.old_log_prob).exp();
                let unclipped = ratio * adv;
                let clipped = ratio.clamp(1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip) * adv;
                acc.surrogate += unclipped.min(clipped);
                let h = entropy(&probs);
                acc.entropy += h;

                dlogits.iter_mut().for_each(|v| *v = 0.0);
                if unclipped <= clipped {
                    // Gradient flows through the unclipped branch only.
                    let coeff = -(cfg.alpha / n) * adv * ratio;
                    for (j, d) in dlogits.iter_mut().enumerate() {
                        let onehot = if j == entry.action { 1.0 } else { 0.0 };
                        *d += coeff * (onehot - probs[j]);
                    }
                }
                if cfg.entropy_coef > 0.0 {
                    for (j, d) in dlogits.iter_mut().enumerate() {
                        *d += (cfg.entropy_coef / n) * probs[j] * (logps[j] + h);
                    }
                }
                mlp_backward(&policy.actor_spec, &policy.actor, &cache, &dlogits, &mut acc.grad_actor);

                let (v, vcache) = policy.value_cached(&entry.input);
                let verr = v - advantages.value_targets[i];
                acc.value += verr * verr;
                mlp_backward(
                    &policy.critic_spec,
                    &policy.critic,
                    &vcache,
                    &[cfg.beta * 2.0 * verr / n],
                    &mut acc.grad_critic,
                );
            }
            acc
        })
        .collect();

    let mut grad_actor = ParamVector::zeros(policy.actor.len());
    let mut grad_critic = ParamVector::zeros(policy.critic.len());
    let mut surrogate = 0.0;
    let mut value = 0.0;
    let mut ent = 0.0;
    for c in chunks {
        surrogate += c.surrogate;
        value += c.value;
        ent += c.entropy;
        grad_actor.axpy(1.0, &c.grad_actor);
        grad_critic.axpy(1.0, &c.grad_critic);
    }
    surrogate /= n;
    value /= n;
    ent /= n;

    let mut bc_log_likelihood = 0.0;
    if cfg.gamma_bc > 0.0 && !demo_minibatch.is_empty() {
        let n_demo = demo_minibatch.len() as f64;
        let mut dlogits = vec![0.0; ACTION_COUNT];
        for pair in demo_minibatch {
            let (logits, cache) = policy.logits_cached(&pair.input);
            let logps = log_softmax(&logits);
            let probs: Vec<f64> = logps.iter().map(|l| l.exp()).collect();
            bc_log_likelihood += logps[pair.action];
            for (j, d) in dlogits.iter_mut().enumerate() {
                let onehot = if j == pair.action { 1.0 } else { 0.0 };
                *d = (cfg.gamma_bc / n_demo) * (probs[j] - onehot);
            }
            mlp_backward(&policy.actor_spec, &policy.actor, &cache, &dlogits, &mut grad_actor);
        }
        bc_log_likelihood /= n_demo;
    }

    let total = -cfg.alpha * surrogate + cfg.beta * value
        - cfg.gamma_bc * bc_log_likelihood
        - cfg.entropy_coef * ent;
    if !total.is_finite() {
        return Err(Error::numerical(format!("PPO loss is not finite: {total}")));
    }

    let grad_norm = clip_gradients_joint(&mut [&mut grad_actor, &mut grad_critic], cfg.max_grad_norm);
    Ok((
        LossTerms {
            total,
            surrogate,
            value,
            bc_log_likelihood,
            entropy: ent,
            grad_norm,
        },
        grad_actor,
        grad_critic,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_env_family, reset};
    use crate::nnet::{finite_diff_check, state_policy_input};
    use crate::ppo::{collect_rollouts, compute_gae};

    #[test]
    fn surrogate_unit_cases_exact() {
        assert_eq!(clipped_surrogate(1.0, 2.0, 0.2), 2.0);
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
    }

    #[test]
    fn value_term_and_bc_toggle() {
        let specs = generate_env_family(1, 83).unwrap();
        let policy = StatePolicy::new(5);
        let mut cfg = PpoBcConfig {
            n_envs: 2,
            n_steps: 10,
            ..Default::default()
        };
        let buffer = collect_rollouts(&policy, &specs, &cfg, 1);
        let adv = compute_gae(&buffer, &cfg);
        let minibatch: Vec<usize> = (0..buffer.len()).collect();

        cfg.gamma_bc = 0.0;
        let (terms, _, _) = ppo_bc_loss(&policy, &buffer, &adv, &minibatch, &[], &cfg).unwrap();
        assert_eq!(terms.bc_log_likelihood, 0.0);
        let expected = -cfg.alpha * terms.surrogate + cfg.beta * terms.value;
        assert!((terms.total - expected).abs() < 1e-12);
    }

    #[test]
    fn first_update_ratios_are_one() {
        // Fresh buffer, unchanged policy: ratio == 1 for every entry, so
        // the surrogate equals the mean normalized advantage.
        let specs = generate_env_family(1, 89).unwrap();
        let policy = StatePolicy::new(6);
        let cfg = PpoBcConfig {
            n_envs: 2,
            n_steps: 15,
            ..Default::default()
        };
        let buffer = collect_rollouts(&policy, &specs, &cfg, 2);
        let adv = compute_gae(&buffer, &cfg);
        let minibatch: Vec<usize> = (0..buffer.len()).collect();
        let (terms, _, _) = ppo_bc_loss(&policy, &buffer, &adv, &minibatch, &[], &cfg).unwrap();
        let n = minibatch.len() as f64;
        let mean: f64 = adv.advantages.iter().sum::<f64>() / n;
        let var: f64 = adv.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let norm_mean: f64 = adv
            .advantages
            .iter()
            .map(|a| (a - mean) / (var.sqrt() + 1e-8))
            .sum::<f64>()
            / n;
        assert!((terms.surrogate - norm_mean).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let specs = generate_env_family(1, 97).unwrap();
        let policy = StatePolicy::new(7);
        let cfg = PpoBcConfig {
            n_envs: 1,
            n_steps: 3,
            max_grad_norm: 1e9, // keep the check linear
            entropy_coef: 0.01,
            ..Default::default()
        };
        let buffer = collect_rollouts(&policy, &specs, &cfg, 3);
        let adv = compute_gae(&buffer, &cfg);
        let minibatch: Vec<usize> = (0..buffer.len()).collect();
        let state = reset(&specs[0], 11);
        let demo = DemoPair {
            input: state_policy_input(&specs[0], &state),
            action: 2,
        };
        let demos = vec![&demo];

        let (_, grad_actor, grad_critic) =
            ppo_bc_loss(&policy, &buffer, &adv, &minibatch, &demos, &cfg).unwrap();

        let actor_loss = |params: &ParamVector| {
            let mut p = policy.clone();
            p.actor = params.clone();
            let (terms, _, _) = ppo_bc_loss(&p, &buffer, &adv, &minibatch, &demos, &cfg).unwrap();
            terms.total
        };
        let err_actor = finite_diff_check(actor_loss, &policy.actor, &grad_actor, 1e-5);
        assert!(err_actor <= 1e-4, "actor gradient error {err_actor}");

        let critic_loss = |params: &ParamVector| {
            let mut p = policy.clone();
            p.critic = params.clone();
            let (terms, _, _) = ppo_bc_loss(&p, &buffer, &adv, &minibatch, &demos, &cfg).unwrap();
            terms.total
        };
        let err_critic = finite_diff_check(critic_loss, &policy.critic, &grad_critic, 1e-5);
        assert!(err_critic <= 1e-4, "critic gradient error {err_critic}");
    }
}
