use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvSpec, ObsGrid, WorldState, OBS_GRID_LEN, ROBOT_STATE_LEN};
use crate::nnet::{
    action_distribution, init_params, log_softmax, mlp_backward, mlp_forward_cached, ForwardCache,
    MlpSpec, ParamVector,
};
use crate::rng;

/// Fixed-size environment encoding appended to the privileged state:
/// goal center plus up to four obstacle slots (center, half-extents),
/// zero-padded.
pub const ENV_ENCODING_LEN: usize = 2 + 4 * 4;
/// Privileged policy input: flattened world state plus environment encoding.
pub const STATE_INPUT_LEN: usize = 7 + ENV_ENCODING_LEN;
/// Observation embedding width produced by the generalist encoder.
pub const EMBED_DIM: usize = 64;

const HIDDEN: [usize; 2] = [64, 64];
const N_ACTIONS: usize = crate::env::ACTION_COUNT;

pub fn encode_env(spec: &EnvSpec) -> [f64; ENV_ENCODING_LEN] {
    let mut enc = [0.0; ENV_ENCODING_LEN];
    enc[0] = spec.goal_site.center.x;
    enc[1] = spec.goal_site.center.y;
    for (k, rect) in spec.obstacles.iter().take(4).enumerate() {
        let c = rect.center();
        let (hw, hh) = rect.half_extents();
        enc[2 + 4 * k] = c.x;
        enc[2 + 4 * k + 1] = c.y;
        enc[2 + 4 * k + 2] = hw;
        enc[2 + 4 * k + 3] = hh;
    }
    enc
}

/// Input vector for state-based policies.
pub fn state_policy_input(spec: &EnvSpec, state: &WorldState) -> Vec<f64> {
    let mut input = Vec::with_capacity(STATE_INPUT_LEN);
    input.extend_from_slice(&state.to_vec());
    input.extend_from_slice(&encode_env(spec));
    input
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Actor-critic over privileged state. Actor and critic hold separate
/// parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePolicy {
    pub actor_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub actor: ParamVector,
    pub critic: ParamVector,
}

impl StatePolicy {
    pub fn new(seed: u64) -> Self {
        let actor_spec = MlpSpec::new(STATE_INPUT_LEN, &HIDDEN, N_ACTIONS);
        let critic_spec = MlpSpec::new(STATE_INPUT_LEN, &HIDDEN, 1);
        StatePolicy {
            actor: init_params(&actor_spec, rng::derive(seed, "actor", 0, 0)),
            critic: init_params(&critic_spec, rng::derive(seed, "critic", 0, 0)),
            actor_spec,
            critic_spec,
        }
    }

    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        self.logits_cached(input).0
    }

    pub fn logits_cached(&self, input: &[f64]) -> (Vec<f64>, ForwardCache) {
        mlp_forward_cached(&self.actor_spec, &self.actor, input)
            .expect("actor dims fixed at construction")
    }

    pub fn value(&self, input: &[f64]) -> f64 {
        self.value_cached(input).0
    }

    pub fn value_cached(&self, input: &[f64]) -> (f64, ForwardCache) {
        let (out, cache) = mlp_forward_cached(&self.critic_spec, &self.critic, input)
            .expect("critic dims fixed at construction");
        (out[0], cache)
    }

    pub fn action_probs(&self, input: &[f64]) -> Vec<f64> {
        action_distribution(&self.logits(input)).expect("finite logits")
    }

    /// Sample an action; returns (action, log-probability).
    pub fn sample_action(&self, input: &[f64], rng: &mut ChaCha8Rng) -> (usize, f64) {
        let logits = self.logits(input);
        let probs = action_distribution(&logits).expect("finite logits");
        let action = sample_categorical(&probs, rng);
        let logp = log_softmax(&logits)[action];
        (action, logp)
    }

    pub fn argmax_action(&self, input: &[f64]) -> usize {
        argmax(&self.logits(input))
    }
}

/// Cache of one generalist forward pass, for the backward step.
pub struct GeneralistCache {
    pub encoder: ForwardCache,
    pub head: ForwardCache,
}

/// Observation-conditioned policy: an encoder MLP over the flattened
/// observation grid and a head MLP over (embedding, robot state).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralistPolicy {
    pub encoder_spec: MlpSpec,
    pub head_spec: MlpSpec,
    pub encoder: ParamVector,
    pub head: ParamVector,
    /// When set, updates must leave encoder parameters bit-identical.
    pub encoder_frozen: bool,
}

impl GeneralistPolicy {
    pub fn new(seed: u64) -> Self {
        let encoder_spec = MlpSpec::new(OBS_GRID_LEN, &HIDDEN, EMBED_DIM);
        let head_spec = MlpSpec::new(EMBED_DIM + ROBOT_STATE_LEN, &HIDDEN, N_ACTIONS);
        GeneralistPolicy {
            encoder: init_params(&encoder_spec, rng::derive(seed, "encoder", 0, 0)),
            head: init_params(&head_spec, rng::derive(seed, "head", 0, 0)),
            encoder_spec,
            head_spec,
            encoder_frozen: false,
        }
    }

    pub fn logits(&self, obs: &ObsGrid) -> Vec<f64> {
        self.forward_cached(obs).0
    }

    pub fn forward_cached(&self, obs: &ObsGrid) -> (Vec<f64>, GeneralistCache) {
        let (embedding, enc_cache) = mlp_forward_cached(&self.encoder_spec, &self.encoder, &obs.grid)
            .expect("encoder dims fixed at construction");
        let mut head_in = embedding;
        head_in.extend_from_slice(&obs.robot);
        let (logits, head_cache) = mlp_forward_cached(&self.head_spec, &self.head, &head_in)
            .expect("head dims fixed at construction");
        (
            logits,
            GeneralistCache {
                encoder: enc_cache,
                head: head_cache,
            },
        )
    }

    /// Accumulate parameter gradients for dLoss/d(logits). The encoder
    /// gradient is skipped when the freeze flag is set.
    pub fn backward(
        &self,
        cache: &GeneralistCache,
        grad_logits: &[f64],
        grad_encoder: &mut ParamVector,
        grad_head: &mut ParamVector,
    ) {
        let grad_head_in = mlp_backward(&self.head_spec, &self.head, &cache.head, grad_logits, grad_head);
        if !self.encoder_frozen {
            mlp_backward(
                &self.encoder_spec,
                &self.encoder,
                &cache.encoder,
                &grad_head_in[..self.encoder_spec.output_dim],
                grad_encoder,
            );
        }
    }

    pub fn sample_action(&self, obs: &ObsGrid, rng: &mut ChaCha8Rng) -> (usize, f64) {
        let logits = self.logits(obs);
        let probs = action_distribution(&logits).expect("finite logits");
        let action = sample_categorical(&probs, rng);
        let logp = log_softmax(&logits)[action];
        (action, logp)
    }

    pub fn argmax_action(&self, obs: &ObsGrid) -> usize {
        argmax(&self.logits(obs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_env_family, render_observation, reset};

    #[test]
    fn probabilities_sum_to_one() {
        let specs = generate_env_family(2, 3).unwrap();
        let policy = StatePolicy::new(1);
        let state = reset(&specs[0], 0);
        let input = state_policy_input(&specs[0], &state);
        let probs = policy.action_probs(&input);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(StatePolicy::new(9), StatePolicy::new(9));
        let a = GeneralistPolicy::new(4);
        let b = GeneralistPolicy::new(4);
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.head, b.head);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let specs = generate_env_family(1, 8).unwrap();
        let policy = GeneralistPolicy::new(2);
        let state = reset(&specs[0], 0);
        let obs = render_observation(&specs[0], &state, None);
        let mut r1 = rng::rng(5, "t", 0, 0);
        let mut r2 = rng::rng(5, "t", 0, 0);
        assert_eq!(policy.sample_action(&obs, &mut r1), policy.sample_action(&obs, &mut r2));
    }

    #[test]
    fn env_encoding_pads_with_zeros() {
        let specs = generate_env_family(3, 12).unwrap();
        for spec in &specs {
            let enc = encode_env(spec);
            for k in spec.obstacles.len()..4 {
                for j in 0..4 {
                    assert_eq!(enc[2 + 4 * k + j], 0.0);
                }
            }
        }
    }
}
