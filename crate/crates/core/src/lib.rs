//! Desk-scale pipeline for training generalist pick-and-place policies in
//! simulation with continually shrinking human effort: a procedural
//! environment family, a scripted demonstrator, demonstration-bootstrapped
//! PPO over privileged state, teacher-student distillation into an
//! observation-based generalist, the batched continual-collection loop
//! that replaces human demonstrations with model-generated ones, and the
//! evaluation harness that turns runs into CSV reports.

pub mod agent;
pub mod distill;
pub mod env;
pub mod error;
pub mod eval;
pub mod expert;
pub mod flywheel;
pub mod geom;
pub mod grid;
pub mod nnet;
pub mod ppo;
pub mod rng;
pub mod trajectory;

pub use error::{Error, Result};

pub use env::{EnvSpec, ObsGrid, WorldState, EPISODE_LENGTH};
pub use nnet::{GeneralistPolicy, MlpSpec, ParamVector, StatePolicy};
pub use trajectory::{Trajectory, Transition};
