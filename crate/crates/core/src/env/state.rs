use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    EnvSpec, ACTION_GRASP, ACTION_NEG_X, ACTION_NEG_Y, ACTION_POS_X, ACTION_POS_Y, ACTION_RELEASE,
    EPISODE_LENGTH, GRASP_RADIUS, HOME, STEP_DELTA,
};
use crate::error::{Error, Result};
use crate::geom::{point_in_any_interior, Point, Rect};
use crate::grid::cell_of;
use crate::rng;

pub const ACTION_COUNT: usize = 6;

/// Privileged simulator state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ee_pos: Point,
    pub object_pos: Point,
    pub carried: bool,
    pub gripper_open: bool,
    pub step_count: u32,
}

impl WorldState {
    /// Flattened state vector fed to state-based policies.
    pub fn to_vec(&self) -> [f64; 7] {
        [
            self.ee_pos.x,
            self.ee_pos.y,
            self.object_pos.x,
            self.object_pos.y,
            if self.carried { 1.0 } else { 0.0 },
            if self.gripper_open { 1.0 } else { 0.0 },
            f64::from(self.step_count) / f64::from(EPISODE_LENGTH),
        ]
    }
}

/// Reset to the episode start: end-effector at home, object at its
/// nominal position plus per-axis uniform jitter, re-sampled until it
/// lands collision-free in a free grid cell (falling back to the nominal
/// position, which generation guarantees to be valid).
pub fn reset(spec: &EnvSpec, episode_seed: u64) -> WorldState {
    let mut r = rng::rng(episode_seed, "reset", spec.layout_seed, 0);
    let grid = spec.occupancy();
    let mut object_pos = spec.object_nominal;
    for _ in 0..100 {
        let dx = r.random_range(-spec.object_jitter..=spec.object_jitter);
        let dy = r.random_range(-spec.object_jitter..=spec.object_jitter);
        let p = Point::new(spec.object_nominal.x + dx, spec.object_nominal.y + dy).clamp_unit();
        if !point_in_any_interior(&spec.obstacles, p) && grid.is_free(cell_of(p)) {
            object_pos = p;
            break;
        }
    }
    WorldState {
        ee_pos: HOME,
        object_pos,
        carried: false,
        gripper_open: true,
        step_count: 0,
    }
}

/// Sparse success predicate: object inside the goal disk, gripper open,
/// object not held.
pub fn is_success(spec: &EnvSpec, state: &WorldState) -> bool {
    state.object_pos.dist(spec.goal_site.center) < spec.goal_site.radius
        && state.gripper_open
        && !state.carried
}

/// Advance one step. Motion actions translate the end-effector by
/// `STEP_DELTA` with clamping at workspace bounds and obstacle faces;
/// grasp picks the object when in range; release drops it in place.
/// Returns (next state, reward, done).
pub fn step(spec: &EnvSpec, state: &WorldState, action: usize) -> Result<(WorldState, f64, bool)> {
    if action >= ACTION_COUNT {
        return Err(Error::contract(format!(
            "action index {action} out of range [0, {ACTION_COUNT})"
        )));
    }
    if state.step_count >= EPISODE_LENGTH {
        return Err(Error::contract("step on a terminated episode"));
    }
    let mut next = *state;
    match action {
        ACTION_POS_X => next.ee_pos = slide(&spec.obstacles, state.ee_pos, STEP_DELTA, 0.0),
        ACTION_NEG_X => next.ee_pos = slide(&spec.obstacles, state.ee_pos, -STEP_DELTA, 0.0),
        ACTION_POS_Y => next.ee_pos = slide(&spec.obstacles, state.ee_pos, 0.0, STEP_DELTA),
        ACTION_NEG_Y => next.ee_pos = slide(&spec.obstacles, state.ee_pos, 0.0, -STEP_DELTA),
        ACTION_GRASP => {
            if !state.carried && state.ee_pos.dist(state.object_pos) < GRASP_RADIUS {
                next.carried = true;
                next.gripper_open = false;
                next.object_pos = next.ee_pos;
            }
        }
        ACTION_RELEASE => {
            next.carried = false;
            next.gripper_open = true;
        }
        _ => unreachable!(),
    }
    if next.carried {
        next.object_pos = next.ee_pos;
    }
    next.step_count += 1;
    let success = is_success(spec, &next);
    let done = success || next.step_count == EPISODE_LENGTH;
    Ok((next, if success { 1.0 } else { 0.0 }, done))
}

/// Axis move with obstacle-face and workspace clamping. Exactly one of
/// dx, dy is nonzero.
fn slide(obstacles: &[Rect], p: Point, dx: f64, dy: f64) -> Point {
    if dx != 0.0 {
        let mut t = dx.abs().min(if dx > 0.0 { 1.0 - p.x } else { p.x });
        for o in obstacles {
            if p.y > o.y0 && p.y < o.y1 {
                if dx > 0.0 && p.x <= o.x0 && p.x + t > o.x0 {
                    t = o.x0 - p.x;
                } else if dx < 0.0 && p.x >= o.x1 && p.x - t < o.x1 {
                    t = p.x - o.x1;
                }
            }
        }
        Point::new(p.x + t * dx.signum(), p.y)
    } else {
        let mut t = dy.abs().min(if dy > 0.0 { 1.0 - p.y } else { p.y });
        for o in obstacles {
            if p.x > o.x0 && p.x < o.x1 {
                if dy > 0.0 && p.y <= o.y0 && p.y + t > o.y0 {
                    t = o.y0 - p.y;
                } else if dy < 0.0 && p.y >= o.y1 && p.y - t < o.y1 {
                    t = p.y - o.y1;
                }
            }
        }
        Point::new(p.x, p.y + t * dy.signum())
    }
}

/// Displace the object uniformly within the jitter half-range, re-sampled
/// until the new position is collision-free, in a free reachable cell,
/// and outside the goal disk. Requires the object not to be held.
pub fn inject_disturbance(spec: &EnvSpec, state: &WorldState, seed: u64) -> Result<WorldState> {
    if state.carried {
        return Err(Error::contract("cannot disturb a carried object"));
    }
    let mut r = rng::rng(seed, "disturb", spec.layout_seed, 0);
    let grid = spec.occupancy();
    let none = crate::grid::OccupancyGrid::no_extra_blocked();
    let reach = grid.distance_field(cell_of(state.ee_pos), &none);
    let mut next = *state;
    for _ in 0..100 {
        let dx = r.random_range(-spec.object_jitter..=spec.object_jitter);
        let dy = r.random_range(-spec.object_jitter..=spec.object_jitter);
        let p = Point::new(state.object_pos.x + dx, state.object_pos.y + dy).clamp_unit();
        let cell = cell_of(p);
        if !point_in_any_interior(&spec.obstacles, p)
            && grid.is_free(cell)
            && reach[cell.index()].is_some()
            && p.dist(spec.goal_site.center) >= spec.goal_site.radius + 0.02
        {
            next.object_pos = p;
            return Ok(next);
        }
    }
    // Degenerate layout: no valid displacement found, leave it in place.
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_env_family;

    fn open_spec() -> EnvSpec {
        EnvSpec {
            env_id: "test-open".into(),
            layout_seed: 1,
            obstacles: vec![],
            goal_site: crate::env::GoalSite {
                center: Point::new(0.8, 0.8),
                radius: 0.08,
            },
            object_nominal: Point::new(0.3, 0.5),
            object_jitter: 0.1,
            texture_seed: 0,
        }
    }

    #[test]
    fn reset_is_deterministic_with_bounded_jitter() {
        let specs = generate_env_family(4, 9).unwrap();
        for spec in &specs {
            for ep in 0..50u64 {
                let a = reset(spec, ep);
                let b = reset(spec, ep);
                assert_eq!(a, b);
                assert!(!a.carried && a.gripper_open && a.step_count == 0);
                assert_eq!(a.ee_pos, HOME);
                assert!((a.object_pos.x - spec.object_nominal.x).abs() <= spec.object_jitter + 1e-12);
                assert!((a.object_pos.y - spec.object_nominal.y).abs() <= spec.object_jitter + 1e-12);
                assert!(!point_in_any_interior(&spec.obstacles, a.object_pos));
            }
        }
    }

    #[test]
    fn motion_moves_by_step_delta() {
        let spec = open_spec();
        let mut s = reset(&spec, 0);
        s.ee_pos = Point::new(0.5, 0.5);
        let (next, _, _) = step(&spec, &s, ACTION_POS_X).unwrap();
        assert!((next.ee_pos.x - 0.53).abs() < 1e-15);
        assert_eq!(next.ee_pos.y, 0.5);
    }

    #[test]
    fn motion_clamps_at_obstacle_face() {
        let mut spec = open_spec();
        spec.obstacles = vec![Rect::new(0.52, 0.4, 0.7, 0.6)];
        let mut s = reset(&spec, 0);
        s.ee_pos = Point::new(0.5, 0.5);
        let (next, _, _) = step(&spec, &s, ACTION_POS_X).unwrap();
        assert_eq!(next.ee_pos.x, 0.52);
        // A further push stays on the face.
        let (next2, _, _) = step(&spec, &next, ACTION_POS_X).unwrap();
        assert_eq!(next2.ee_pos.x, 0.52);
        // Sliding along the face is allowed.
        let (next3, _, _) = step(&spec, &next2, ACTION_POS_Y).unwrap();
        assert_eq!(next3.ee_pos.y, 0.53);
    }

    #[test]
    fn motion_clamps_at_workspace_bounds() {
        let spec = open_spec();
        let mut s = reset(&spec, 0);
        s.ee_pos = Point::new(0.99, 0.5);
        let (next, _, _) = step(&spec, &s, ACTION_POS_X).unwrap();
        assert_eq!(next.ee_pos.x, 1.0);
    }

    #[test]
    fn grasp_carry_release_cycle() {
        let spec = open_spec();
        let mut s = reset(&spec, 3);
        s.ee_pos = s.object_pos; // teleport for the unit test
        let (s, _, _) = step(&spec, &s, ACTION_GRASP).unwrap();
        assert!(s.carried && !s.gripper_open);
        assert_eq!(s.object_pos, s.ee_pos);
        let (s, _, _) = step(&spec, &s, ACTION_POS_X).unwrap();
        assert_eq!(s.object_pos, s.ee_pos);
        let (s, _, _) = step(&spec, &s, ACTION_RELEASE).unwrap();
        assert!(!s.carried && s.gripper_open);
    }

    #[test]
    fn grasp_out_of_range_is_noop() {
        let spec = open_spec();
        let s = reset(&spec, 5);
        let (next, _, _) = step(&spec, &s, ACTION_GRASP).unwrap();
        assert!(!next.carried && next.gripper_open);
        assert_eq!(next.object_pos, s.object_pos);
    }

    #[test]
    fn release_in_goal_scores() {
        let spec = open_spec();
        let mut s = reset(&spec, 0);
        s.ee_pos = spec.goal_site.center;
        s.object_pos = s.ee_pos;
        s.carried = true;
        s.gripper_open = false;
        let (next, reward, done) = step(&spec, &s, ACTION_RELEASE).unwrap();
        assert!(done);
        assert_eq!(reward, 1.0);
        assert!(is_success(&spec, &next));
    }

    #[test]
    fn success_boundary_is_strict() {
        let spec = open_spec();
        let mk = |d: f64| WorldState {
            ee_pos: HOME,
            object_pos: Point::new(spec.goal_site.center.x - d, spec.goal_site.center.y),
            carried: false,
            gripper_open: true,
            step_count: 1,
        };
        assert!(is_success(&spec, &mk(0.079)));
        assert!(!is_success(&spec, &mk(0.081)));
        let mut carried = mk(0.0);
        carried.carried = true;
        carried.gripper_open = false;
        carried.ee_pos = carried.object_pos;
        assert!(!is_success(&spec, &carried));
    }

    #[test]
    fn invalid_action_rejected() {
        let spec = open_spec();
        let s = reset(&spec, 0);
        assert!(matches!(
            step(&spec, &s, 6),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn episode_times_out() {
        let spec = open_spec();
        let mut s = reset(&spec, 0);
        let mut done = false;
        for i in 0..EPISODE_LENGTH {
            let (next, _, d) = step(&spec, &s, ACTION_POS_Y).unwrap();
            s = next;
            done = d;
            if i + 1 < EPISODE_LENGTH {
                assert!(!done);
            }
        }
        assert!(done);
        assert!(step(&spec, &s, ACTION_POS_Y).is_err());
    }

    #[test]
    fn disturbance_moves_object_only() {
        let specs = generate_env_family(3, 11).unwrap();
        for spec in &specs {
            let s = reset(spec, 0);
            let d1 = inject_disturbance(spec, &s, 77).unwrap();
            let d2 = inject_disturbance(spec, &s, 77).unwrap();
            assert_eq!(d1, d2);
            assert_eq!(d1.ee_pos, s.ee_pos);
            assert_eq!(d1.gripper_open, s.gripper_open);
            assert!((d1.object_pos.x - s.object_pos.x).abs() <= spec.object_jitter + 1e-12);
            assert!((d1.object_pos.y - s.object_pos.y).abs() <= spec.object_jitter + 1e-12);
            let mut held = s;
            held.carried = true;
            held.gripper_open = false;
            assert!(inject_disturbance(spec, &held, 1).is_err());
        }
    }

    #[test]
    fn random_walks_never_penetrate_obstacles() {
        use rand::Rng;
        let specs = generate_env_family(5, 21).unwrap();
        let mut r = crate::rng::rng(0xA5A5, "fuzz-walk", 0, 0);
        for spec in &specs {
            for _ in 0..350 {
                let mut s = reset(spec, r.random());
                loop {
                    let a = r.random_range(0..ACTION_COUNT);
                    let (next, _, done) = step(spec, &s, a).unwrap();
                    assert!(
                        !point_in_any_interior(&spec.obstacles, next.ee_pos),
                        "ee inside obstacle in {}",
                        spec.env_id
                    );
                    if next.carried {
                        assert_eq!(next.object_pos, next.ee_pos);
                        assert!(!next.gripper_open);
                    }
                    s = next;
                    if done {
                        break;
                    }
                }
            }
        }
    }
}
