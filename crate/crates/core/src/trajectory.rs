use serde::{Deserialize, Serialize};

use crate::env::WorldState;

/// One step of an episode: the pre-action state, the action taken in it,
/// and the resulting reward/done flags. Observations are not stored; they
/// are re-renderable from (spec, state, noise seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: WorldState,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

/// An ordered episode record tagged with its environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env_id: String,
    pub episode_seed: u64,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// True when the episode terminated with the sparse reward.
    pub fn is_success(&self) -> bool {
        self.transitions
            .last()
            .map(|t| t.done && t.reward == 1.0)
            .unwrap_or(false)
    }
}
