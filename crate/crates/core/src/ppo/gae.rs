use crate::ppo::{PpoBcConfig, RolloutBuffer};

/// Advantages and value-regression targets, aligned with the buffer.
#[derive(Debug, Clone)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

/// Generalized advantage estimation, truncated at episode boundaries:
/// delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t),
/// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1},
/// V_t^targ = A_t + V(s_t).
pub fn compute_gae(buffer: &RolloutBuffer, cfg: &PpoBcConfig) -> AdvantageEstimate {
    let gamma = cfg.gamma_discount;
    let lambda = cfg.gae_lambda;
    let mut advantages = vec![0.0; buffer.len()];
    let mut value_targets = vec![0.0; buffer.len()];
    for e in 0..buffer.n_envs {
        let base = e * buffer.n_steps;
        let mut gae = 0.0;
        for t in (0..buffer.n_steps).rev() {
            let i = base + t;
            let entry = &buffer.entries[i];
            let next_value = if t + 1 == buffer.n_steps {
                buffer.bootstrap_values[e]
            } else {
                buffer.entries[i + 1].value
            };
            let nonterminal = if entry.done { 0.0 } else { 1.0 };
            let delta = entry.reward + gamma * next_value * nonterminal - entry.value;
            gae = delta + gamma * lambda * nonterminal * gae;
            advantages[i] = gae;
            value_targets[i] = gae + entry.value;
        }
    }
    AdvantageEstimate {
        advantages,
        value_targets,
    }
}
