//! Planar sparse-reward pick-and-place environment family. Each
//! environment is a procedurally generated layout of rectangular
//! obstacles with a goal site in the unit square; the robot is a point
//! end-effector with discrete delta actions and a gripper.

mod obs;
mod spec;
mod state;

pub(crate) mod spec_limits {
    pub(crate) use super::spec::{MAX_TOTAL_PATH_HOPS, MIN_OBJECT_GOAL_SEPARATION};
}

pub use obs::{render_observation, ObsGrid, OBS_CHANNELS, OBS_GRID_LEN, ROBOT_STATE_LEN};
pub use spec::{
    generate_env_family, read_envs_jsonl, write_envs_jsonl, EnvSpec, GoalSite, ENVS_SCHEMA,
};
pub use state::{inject_disturbance, is_success, reset, step, WorldState, ACTION_COUNT};

use crate::geom::Point;

/// Steps per episode; an episode ends at this count if no success occurs.
pub const EPISODE_LENGTH: u32 = 60;
/// Translation per motion action, in workspace units.
pub const STEP_DELTA: f64 = 0.03;
/// Grasp succeeds when the end-effector is strictly closer than this.
pub const GRASP_RADIUS: f64 = 0.04;
/// Default goal-site radius.
pub const GOAL_RADIUS: f64 = 0.08;
/// Default half-range of object reset randomization, per axis.
pub const OBJECT_JITTER: f64 = 0.1;
/// Fixed end-effector home position (a free-cell center at the bottom edge).
pub const HOME: Point = Point::new(0.53125, 0.03125);

/// Discrete action indices.
pub const ACTION_POS_X: usize = 0;
pub const ACTION_NEG_X: usize = 1;
pub const ACTION_POS_Y: usize = 2;
pub const ACTION_NEG_Y: usize = 3;
pub const ACTION_GRASP: usize = 4;
pub const ACTION_RELEASE: usize = 5;
