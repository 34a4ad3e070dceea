//! Scripted waypoint demonstrator. Plans on the occupancy grid, follows
//! cell-center waypoints with discrete delta actions, and can sample among
//! distinct homotopy route classes to emulate multimodal demonstrators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::env::{
    reset, step, EnvSpec, ObsGrid, WorldState, ACTION_GRASP, ACTION_NEG_X, ACTION_NEG_Y,
    ACTION_POS_X, ACTION_POS_Y, ACTION_RELEASE, GRASP_RADIUS,
};
use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::grid::{cell_of, Cell, OccupancyGrid};
use crate::rng;
use crate::trajectory::{Trajectory, Transition};

/// Axis deadband when approaching a target point. Residuals per axis stay
/// below this, so the worst-case distance to a reached point is ~0.021,
/// inside the grasp radius.
const APPROACH_TOL: f64 = 0.0151;
/// Emit grasp strictly inside the grasp radius to absorb rounding.
const GRASP_EMIT: f64 = 0.9 * GRASP_RADIUS;
/// Release margin inside the goal radius.
const RELEASE_MARGIN: f64 = 0.01;
/// Retries per requested demonstration before giving up.
const ATTEMPTS_PER_DEMO: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    /// Number of distinct route classes sampled among when the layout
    /// admits them.
    pub multimodality: usize,
    /// Probability of substituting a random motion action at each step.
    pub action_noise: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            multimodality: 1,
            action_noise: 0.0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.multimodality < 1 {
            return Err(Error::contract("multimodality must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.action_noise) {
            return Err(Error::contract("action_noise must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Side labels of a route relative to one obstacle: how the route crosses
/// the obstacle's x-band and y-band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideLabel {
    None,
    Low,
    High,
    Mixed,
}

/// Per-obstacle (x-band, y-band) side labels; routes with different
/// signatures belong to different route classes.
pub fn route_signature(points: &[Point], obstacles: &[Rect]) -> Vec<(SideLabel, SideLabel)> {
    obstacles
        .iter()
        .map(|o| {
            let xband: Vec<&Point> = points.iter().filter(|p| p.x >= o.x0 && p.x <= o.x1).collect();
            let x_label = band_label(xband.iter().map(|p| p.y), o.y0, o.y1);
            let yband: Vec<&Point> = points.iter().filter(|p| p.y >= o.y0 && p.y <= o.y1).collect();
            let y_label = band_label(yband.iter().map(|p| p.x), o.x0, o.x1);
            (x_label, y_label)
        })
        .collect()
}

fn band_label(values: impl Iterator<Item = f64>, lo: f64, hi: f64) -> SideLabel {
    let mut any = false;
    let mut all_low = true;
    let mut all_high = true;
    for v in values {
        any = true;
        if v > lo {
            all_low = false;
        }
        if v < hi {
            all_high = false;
        }
    }
    match (any, all_low, all_high) {
        (false, _, _) => SideLabel::None,
        (true, true, _) => SideLabel::Low,
        (true, _, true) => SideLabel::High,
        _ => SideLabel::Mixed,
    }
}

fn cells_to_points(cells: &[Cell]) -> Vec<Point> {
    cells.iter().map(|c| c.center()).collect()
}

/// Up to `k` routes with pairwise distinct side signatures, shortest
/// first. Alternatives are found by re-planning with previous routes'
/// interior cells blocked.
pub fn plan_routes(
    grid: &OccupancyGrid,
    obstacles: &[Rect],
    from: Cell,
    to: Cell,
    k: usize,
) -> Result<Vec<Vec<Cell>>> {
    let none = OccupancyGrid::no_extra_blocked();
    let base = grid.shortest_path(from, to, &none).ok_or(Error::Infeasible)?;
    let mut routes = vec![base.clone()];
    let mut signatures = vec![route_signature(&cells_to_points(&base), obstacles)];
    let mut blocked = OccupancyGrid::no_extra_blocked();
    let mut last_path = base;
    let mut tried = 0;
    while routes.len() < k && tried < 4 * k {
        tried += 1;
        // Blocking the previous path (accepted or not) strictly shrinks the
        // free set, so each round makes progress.
        for cell in &last_path {
            if *cell != from && *cell != to {
                blocked[cell.index()] = true;
            }
        }
        match grid.shortest_path(from, to, &blocked) {
            Some(alt) => {
                let sig = route_signature(&cells_to_points(&alt), obstacles);
                if !signatures.contains(&sig) {
                    routes.push(alt.clone());
                    signatures.push(sig);
                }
                last_path = alt;
            }
            None => break,
        }
    }
    Ok(routes)
}

/// Collision-free waypoint sequence from `from` to `to` (shortest route).
/// Waypoints are free-cell centers; the final waypoint is `to` itself.
pub fn plan_path(spec: &EnvSpec, from: Point, to: Point) -> Result<Vec<Point>> {
    let grid = spec.occupancy();
    let routes = plan_routes(&grid, &spec.obstacles, cell_of(from), cell_of(to), 1)?;
    let mut points = cells_to_points(&routes[0]);
    *points.last_mut().unwrap() = to;
    Ok(points)
}

/// Per-episode plan and controller state: the chosen route to the object
/// and the hop-distance field to the goal.
pub struct ExpertController {
    grid: OccupancyGrid,
    goal_field: Vec<Option<u32>>,
    goal_cell: Cell,
    route: Vec<Cell>,
    progress: usize,
    planned_object_cell: Cell,
    route_choice: usize,
    multimodality: usize,
}

impl ExpertController {
    pub fn new(
        spec: &EnvSpec,
        state: &WorldState,
        multimodality: usize,
        route_seed: u64,
    ) -> Result<Self> {
        let grid = spec.occupancy();
        let goal_cell = cell_of(spec.goal_site.center);
        let goal_field = grid.distance_field(goal_cell, &OccupancyGrid::no_extra_blocked());
        let mut r = rng::rng(route_seed, "route-choice", spec.layout_seed, 0);
        let route_choice = r.random_range(0..multimodality.max(1));
        let mut controller = ExpertController {
            grid,
            goal_field,
            goal_cell,
            route: Vec::new(),
            progress: 0,
            planned_object_cell: cell_of(state.object_pos),
            route_choice,
            multimodality: multimodality.max(1),
        };
        controller.replan(spec, cell_of(state.ee_pos), cell_of(state.object_pos))?;
        Ok(controller)
    }

    fn replan(&mut self, spec: &EnvSpec, from: Cell, object_cell: Cell) -> Result<()> {
        let routes = plan_routes(&self.grid, &spec.obstacles, from, object_cell, self.multimodality)?;
        self.route = routes[self.route_choice % routes.len()].clone();
        self.progress = 0;
        self.planned_object_cell = object_cell;
        Ok(())
    }

    /// Next expert action for `state`. Deterministic given (plan, state).
    pub fn expert_action(&mut self, spec: &EnvSpec, state: &WorldState) -> usize {
        if state.carried {
            // Carry phase: descend the goal distance field, release inside
            // the goal disk.
            if state.ee_pos.dist(spec.goal_site.center) < spec.goal_site.radius - RELEASE_MARGIN {
                return ACTION_RELEASE;
            }
            let cell = cell_of(state.ee_pos);
            let target = if cell == self.goal_cell {
                spec.goal_site.center
            } else {
                match self.descend_goal_field(cell) {
                    Some(next) => next.center(),
                    None => spec.goal_site.center,
                }
            };
            return move_toward(state.ee_pos, target);
        }

        // Approach phase.
        if state.ee_pos.dist(state.object_pos) < GRASP_EMIT {
            return ACTION_GRASP;
        }
        let object_cell = cell_of(state.object_pos);
        let cell = cell_of(state.ee_pos);
        if object_cell != self.planned_object_cell && self.replan(spec, cell, object_cell).is_err() {
            return ACTION_RELEASE; // no-op; disturbed object unreachable
        }
        while self.progress + 1 < self.route.len() && self.route[self.progress + 1] == cell {
            self.progress += 1;
        }
        if self.route.get(self.progress) != Some(&cell) && self.replan(spec, cell, object_cell).is_err()
        {
            return ACTION_RELEASE;
        }
        let target = if cell == object_cell || self.progress + 1 >= self.route.len() {
            state.object_pos
        } else {
            self.route[self.progress + 1].center()
        };
        move_toward(state.ee_pos, target)
    }

    fn descend_goal_field(&self, cell: Cell) -> Option<Cell> {
        let d = self.goal_field[cell.index()]?;
        const DELTAS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        for (dx, dy) in DELTAS {
            let ix = cell.ix as isize + dx;
            let iy = cell.iy as isize + dy;
            if (0..crate::grid::GRID_SIZE as isize).contains(&ix)
                && (0..crate::grid::GRID_SIZE as isize).contains(&iy)
            {
                let n = Cell {
                    ix: ix as usize,
                    iy: iy as usize,
                };
                if self.goal_field[n.index()] == Some(d.saturating_sub(1)) && d > 0 {
                    return Some(n);
                }
            }
        }
        None
    }
}

/// Move along the axis with the largest residual beyond the deadband.
fn move_toward(from: Point, to: Point) -> usize {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    let x_active = dx.abs() > APPROACH_TOL;
    let y_active = dy.abs() > APPROACH_TOL;
    let pick_x = match (x_active, y_active) {
        (true, false) => true,
        (false, true) => false,
        _ => dx.abs() >= dy.abs(),
    };
    if pick_x {
        if dx > 0.0 {
            ACTION_POS_X
        } else {
            ACTION_NEG_X
        }
    } else if dy > 0.0 {
        ACTION_POS_Y
    } else {
        ACTION_NEG_Y
    }
}

/// Run one expert episode. Returns the trajectory (always recorded).
fn run_expert_episode(
    spec: &EnvSpec,
    cfg: &ExpertConfig,
    episode_seed: u64,
    noise_rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mut state = reset(spec, episode_seed);
    let mut controller = ExpertController::new(spec, &state, cfg.multimodality, episode_seed)?;
    let mut transitions = Vec::new();
    loop {
        let mut action = controller.expert_action(spec, &state);
        if cfg.action_noise > 0.0 && noise_rng.random::<f64>() < cfg.action_noise {
            action = [ACTION_POS_X, ACTION_NEG_X, ACTION_POS_Y, ACTION_NEG_Y]
                [noise_rng.random_range(0..4)];
        }
        let (next, reward, done) = step(spec, &state, action)?;
        transitions.push(Transition {
            state,
            action,
            reward,
            done,
        });
        state = next;
        if done {
            break;
        }
    }
    Ok(Trajectory {
        env_id: spec.env_id.clone(),
        episode_seed,
        transitions,
    })
}

/// Collect exactly `n` successful demonstrations. Episodes that fail
/// (possible only with action noise) are discarded and re-collected up to
/// a bounded retry budget.
pub fn collect_demonstrations(
    spec: &EnvSpec,
    n: usize,
    seed: u64,
    cfg: &ExpertConfig,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let mut demos = Vec::with_capacity(n);
    for i in 0..n {
        let mut collected = false;
        for attempt in 0..ATTEMPTS_PER_DEMO {
            let episode_seed = rng::derive(seed, "demo-episode", i as u64, attempt as u64);
            let mut noise_rng = rng::rng(seed, "demo-noise", i as u64, attempt as u64);
            let traj = run_expert_episode(spec, cfg, episode_seed, &mut noise_rng)?;
            if traj.is_success() {
                demos.push(traj);
                collected = true;
                break;
            }
        }
        if !collected {
            return Err(Error::DemoCollectionFailed {
                env_id: spec.env_id.clone(),
                detail: format!("demo {i} failed {ATTEMPTS_PER_DEMO} attempts"),
            });
        }
    }
    Ok(demos)
}

/// Demonstrator with a running count of demonstrations served. The
/// flywheel ledger is cross-checked against this counter.
pub struct ScriptedExpert {
    pub cfg: ExpertConfig,
    demos_collected: u64,
}

impl ScriptedExpert {
    pub fn new(cfg: ExpertConfig) -> Self {
        ScriptedExpert {
            cfg,
            demos_collected: 0,
        }
    }

    pub fn demos_collected(&self) -> u64 {
        self.demos_collected
    }

    pub fn collect_demonstrations(
        &mut self,
        spec: &EnvSpec,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Trajectory>> {
        let demos = collect_demonstrations(spec, n, seed, &self.cfg)?;
        self.demos_collected += demos.len() as u64;
        Ok(demos)
    }
}

/// Expert as an evaluation agent (re-plans every episode, and after
/// disturbances via the object-cell check).
pub struct ExpertAgent {
    cfg: ExpertConfig,
    controller: Option<ExpertController>,
    seed: u64,
}

impl ExpertAgent {
    pub fn new(cfg: ExpertConfig) -> Self {
        ExpertAgent {
            cfg,
            controller: None,
            seed: 0,
        }
    }
}

impl Agent for ExpertAgent {
    fn begin_episode(&mut self, _spec: &EnvSpec, seed: u64) {
        self.seed = seed;
        self.controller = None;
    }

    fn act(&mut self, spec: &EnvSpec, state: &WorldState, _obs: &ObsGrid) -> usize {
        if self.controller.is_none() {
            self.controller =
                ExpertController::new(spec, state, self.cfg.multimodality, self.seed).ok();
        }
        match self.controller.as_mut() {
            Some(c) => c.expert_action(spec, state),
            None => ACTION_RELEASE,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_env_family, is_success, GoalSite, EPISODE_LENGTH, HOME};

    fn wall_spec() -> EnvSpec {
        // A horizontal wall between the home position (bottom center) and
        // the object above it: routes pass left or right of the wall.
        EnvSpec {
            env_id: "wall".into(),
            layout_seed: 99,
            obstacles: vec![Rect::new(0.35, 0.25, 0.65, 0.35)],
            goal_site: GoalSite {
                center: Point::new(0.25, 0.65),
                radius: 0.08,
            },
            object_nominal: Point::new(0.5, 0.5),
            object_jitter: 0.03,
            texture_seed: 0,
        }
    }

    #[test]
    fn plan_path_open_field_is_near_manhattan() {
        let mut spec = wall_spec();
        spec.obstacles.clear();
        let from = Point::new(0.1, 0.1);
        let to = Point::new(0.8, 0.6);
        let path = plan_path(&spec, from, to).unwrap();
        let manhattan = cell_of(from).manhattan(cell_of(to));
        assert!(path.len().abs_diff(manhattan + 1) <= 1);
        assert_eq!(*path.last().unwrap(), to);
    }

    #[test]
    fn plan_path_waypoints_avoid_obstacles() {
        let spec = wall_spec();
        let path = plan_path(&spec, HOME, spec.object_nominal).unwrap();
        for p in &path {
            assert!(!crate::geom::point_in_any_interior(&spec.obstacles, *p));
        }
    }

    #[test]
    fn enclosed_goal_is_infeasible() {
        let mut spec = wall_spec();
        spec.obstacles = vec![
            Rect::new(0.3, 0.3, 0.7, 0.35),
            Rect::new(0.3, 0.65, 0.7, 0.7),
            Rect::new(0.3, 0.3, 0.35, 0.7),
            Rect::new(0.65, 0.3, 0.7, 0.7),
        ];
        let to = Point::new(0.5, 0.5);
        assert!(matches!(
            plan_path(&spec, Point::new(0.1, 0.1), to),
            Err(Error::Infeasible)
        ));
    }

    #[test]
    fn wall_layout_has_two_route_classes() {
        let spec = wall_spec();
        let grid = spec.occupancy();
        let routes = plan_routes(
            &grid,
            &spec.obstacles,
            cell_of(Point::new(0.5, 0.1)),
            cell_of(Point::new(0.5, 0.9)),
            2,
        )
        .unwrap();
        assert_eq!(routes.len(), 2);
        let s0 = route_signature(&cells_to_points(&routes[0]), &spec.obstacles);
        let s1 = route_signature(&cells_to_points(&routes[1]), &spec.obstacles);
        assert_ne!(s0, s1);
    }

    #[test]
    fn expert_succeeds_on_generated_families() {
        let specs = generate_env_family(20, 31).unwrap();
        let cfg = ExpertConfig::default();
        for spec in &specs {
            let demos = collect_demonstrations(spec, 5, 7, &cfg).unwrap();
            assert_eq!(demos.len(), 5);
            for d in &demos {
                assert!(d.is_success());
                assert!(d.len() <= EPISODE_LENGTH as usize);
            }
        }
    }

    #[test]
    fn demos_are_deterministic_without_noise() {
        let specs = generate_env_family(3, 37).unwrap();
        let cfg = ExpertConfig::default();
        for spec in &specs {
            let a = collect_demonstrations(spec, 4, 11, &cfg).unwrap();
            let b = collect_demonstrations(spec, 4, 11, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn noisy_demos_still_all_succeed() {
        let specs = generate_env_family(3, 41).unwrap();
        let cfg = ExpertConfig {
            multimodality: 1,
            action_noise: 0.1,
        };
        for spec in &specs {
            let demos = collect_demonstrations(spec, 5, 3, &cfg).unwrap();
            assert_eq!(demos.len(), 5);
            assert!(demos.iter().all(|d| d.is_success()));
        }
    }

    #[test]
    fn multimodal_demos_cover_both_route_classes() {
        let spec = wall_spec();
        // Object on the right, start on the left: the wall separates two
        // route classes. Oracle: label each trajectory by the side
        // signature of its raw end-effector positions.
        let cfg = ExpertConfig {
            multimodality: 2,
            action_noise: 0.0,
        };
        let demos = collect_demonstrations(&spec, 10, 5, &cfg).unwrap();
        let mut labels = std::collections::BTreeSet::new();
        for d in &demos {
            let pts: Vec<Point> = d.transitions.iter().map(|t| t.state.ee_pos).collect();
            let sig = route_signature(&pts, &spec.obstacles);
            // y-band label: which side of the wall the crossing happened on.
            let label = match sig[0].1 {
                SideLabel::Low => "left",
                SideLabel::High => "right",
                _ => "other",
            };
            labels.insert(label);
        }
        assert!(labels.contains("left") && labels.contains("right"), "{labels:?}");
    }

    #[test]
    fn expert_action_contracts() {
        let spec = wall_spec();
        let mut state = reset(&spec, 2);
        let mut controller = ExpertController::new(&spec, &state, 1, 0).unwrap();

        // In grasp range, not carried -> grasp.
        state.ee_pos = state.object_pos;
        assert_eq!(controller.expert_action(&spec, &state), ACTION_GRASP);

        // Carried inside the goal -> release.
        state.carried = true;
        state.gripper_open = false;
        state.ee_pos = spec.goal_site.center;
        state.object_pos = state.ee_pos;
        assert_eq!(controller.expert_action(&spec, &state), ACTION_RELEASE);

        // Far left of a waypoint -> +x.
        let mut s2 = reset(&spec, 2);
        s2.ee_pos = Point::new(0.1, 0.03125);
        s2.object_pos = Point::new(0.4, 0.03125);
        let mut c2 = ExpertController::new(&spec, &s2, 1, 0).unwrap();
        assert_eq!(c2.expert_action(&spec, &s2), ACTION_POS_X);
    }

    #[test]
    fn expert_recovers_from_disturbance() {
        use crate::env::inject_disturbance;
        let specs = generate_env_family(5, 53).unwrap();
        for spec in &specs {
            let mut state = reset(spec, 1);
            let mut controller = ExpertController::new(spec, &state, 1, 1).unwrap();
            let mut success = false;
            for stepno in 0.. {
                if stepno == 8 && !state.carried {
                    state = inject_disturbance(spec, &state, 99).unwrap();
                }
                let action = controller.expert_action(spec, &state);
                let (next, _, done) = step(spec, &state, action).unwrap();
                success = is_success(spec, &next);
                state = next;
                if done {
                    break;
                }
            }
            assert!(success, "expert failed after disturbance on {}", spec.env_id);
        }
    }

    #[test]
    fn counter_tracks_demos() {
        let specs = generate_env_family(2, 61).unwrap();
        let mut expert = ScriptedExpert::new(ExpertConfig::default());
        expert.collect_demonstrations(&specs[0], 3, 1).unwrap();
        expert.collect_demonstrations(&specs[1], 4, 2).unwrap();
        assert_eq!(expert.demos_collected(), 7);
    }
}
