use rand_chacha::ChaCha8Rng;

use crate::env::{EnvSpec, ObsGrid, WorldState, ACTION_COUNT};
use crate::nnet::{GeneralistPolicy, StatePolicy};
use crate::rng;

/// Anything that can drive an episode. Evaluation harnesses call
/// `begin_episode` at every reset and `act` once per step.
pub trait Agent {
    fn begin_episode(&mut self, _spec: &EnvSpec, _seed: u64) {}

    fn act(&mut self, spec: &EnvSpec, state: &WorldState, obs: &ObsGrid) -> usize;

    /// Whether the harness must render observations for this agent.
    fn needs_observation(&self) -> bool {
        false
    }
}

/// State-based policy wrapper; samples or takes the argmax action.
pub struct StatePolicyAgent<'a> {
    policy: &'a StatePolicy,
    deterministic: bool,
    rng: ChaCha8Rng,
}

impl<'a> StatePolicyAgent<'a> {
    pub fn new(policy: &'a StatePolicy, deterministic: bool) -> Self {
        StatePolicyAgent {
            policy,
            deterministic,
            rng: rng::rng(0, "agent-default", 0, 0),
        }
    }
}

impl Agent for StatePolicyAgent<'_> {
    fn begin_episode(&mut self, _spec: &EnvSpec, seed: u64) {
        self.rng = rng::rng(seed, "state-agent", 0, 0);
    }

    fn act(&mut self, spec: &EnvSpec, state: &WorldState, _obs: &ObsGrid) -> usize {
        let input = crate::nnet::state_policy_input(spec, state);
        if self.deterministic {
            self.policy.argmax_action(&input)
        } else {
            self.policy.sample_action(&input, &mut self.rng).0
        }
    }
}

/// Observation-based policy wrapper.
pub struct GeneralistAgent<'a> {
    policy: &'a GeneralistPolicy,
    deterministic: bool,
    rng: ChaCha8Rng,
}

impl<'a> GeneralistAgent<'a> {
    pub fn new(policy: &'a GeneralistPolicy, deterministic: bool) -> Self {
        GeneralistAgent {
            policy,
            deterministic,
            rng: rng::rng(0, "agent-default", 0, 0),
        }
    }
}

impl Agent for GeneralistAgent<'_> {
    fn begin_episode(&mut self, _spec: &EnvSpec, seed: u64) {
        self.rng = rng::rng(seed, "generalist-agent", 0, 0);
    }

    fn act(&mut self, _spec: &EnvSpec, _state: &WorldState, obs: &ObsGrid) -> usize {
        if self.deterministic {
            self.policy.argmax_action(obs)
        } else {
            self.policy.sample_action(obs, &mut self.rng).0
        }
    }

    fn needs_observation(&self) -> bool {
        true
    }
}

/// Uniform-random baseline.
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new() -> Self {
        RandomAgent {
            rng: rng::rng(0, "agent-default", 0, 0),
        }
    }
}

impl Default for RandomAgent {
    fn default() -> Self {
        Self::new()
    }
}

impl Agent for RandomAgent {
    fn begin_episode(&mut self, _spec: &EnvSpec, seed: u64) {
        self.rng = rng::rng(seed, "random-agent", 0, 0);
    }

    fn act(&mut self, _spec: &EnvSpec, _state: &WorldState, _obs: &ObsGrid) -> usize {
        use rand::Rng;
        self.rng.random_range(0..ACTION_COUNT)
    }
}

/// Observation-blind baseline that always emits the same action.
pub struct ConstantAgent(pub usize);

impl Agent for ConstantAgent {
    fn act(&mut self, _spec: &EnvSpec, _state: &WorldState, _obs: &ObsGrid) -> usize {
        self.0
    }
}
