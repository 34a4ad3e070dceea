use rand::Rng;

use crate::env::{EnvSpec, WorldState};
use crate::geom::Point;
use crate::grid::{Cell, CELL_SIZE, GRID_SIZE};
use crate::rng;

pub const OBS_CHANNELS: usize = 3;
pub const OBS_GRID_LEN: usize = OBS_CHANNELS * GRID_SIZE * GRID_SIZE;
pub const ROBOT_STATE_LEN: usize = 3;

const CH_OBSTACLE: usize = 0;
const CH_OBJECT: usize = 1;
const CH_GOAL: usize = 2;

const DROPOUT_P: f64 = 0.05;
const INTENSITY_JITTER: f64 = 0.05;

/// Rendered observation: a channels-by-16-by-16 grid (obstacles, object,
/// goal) plus the robot state vector (ee position and carried flag).
#[derive(Debug, Clone, PartialEq)]
pub struct ObsGrid {
    /// Channel-major grid values in [0, 1].
    pub grid: Vec<f64>,
    pub robot: [f64; ROBOT_STATE_LEN],
}

impl ObsGrid {
    pub fn value(&self, channel: usize, cell: Cell) -> f64 {
        self.grid[channel * GRID_SIZE * GRID_SIZE + cell.index()]
    }

    /// Splat an extra object marker into the object channel. Used by the
    /// multi-object evaluation protocol to render distractors.
    pub fn add_object_marker(&mut self, p: Point) {
        splat(
            &mut self.grid[CH_OBJECT * GRID_SIZE * GRID_SIZE..(CH_OBJECT + 1) * GRID_SIZE * GRID_SIZE],
            p,
        );
    }
}

/// Bilinear splat of a point into a single-channel grid, clamped to [0, 1].
fn splat(channel: &mut [f64], p: Point) {
    let u = p.x / CELL_SIZE - 0.5;
    let v = p.y / CELL_SIZE - 0.5;
    let i0 = u.floor();
    let j0 = v.floor();
    let fu = u - i0;
    let fv = v - j0;
    for (di, dj, w) in [
        (0.0, 0.0, (1.0 - fu) * (1.0 - fv)),
        (1.0, 0.0, fu * (1.0 - fv)),
        (0.0, 1.0, (1.0 - fu) * fv),
        (1.0, 1.0, fu * fv),
    ] {
        let i = i0 + di;
        let j = j0 + dj;
        if (0.0..GRID_SIZE as f64).contains(&i) && (0.0..GRID_SIZE as f64).contains(&j) {
            let idx = j as usize * GRID_SIZE + i as usize;
            channel[idx] = (channel[idx] + w).min(1.0);
        }
    }
}

/// Rasterize (spec, state) into an observation. Without `noise_seed` the
/// output is a pure function of its inputs (the synthetic render); with a
/// seed, cell dropout and intensity jitter model a sensor render.
pub fn render_observation(spec: &EnvSpec, state: &WorldState, noise_seed: Option<u64>) -> ObsGrid {
    let mut grid = vec![0.0; OBS_GRID_LEN];
    let occupancy = spec.occupancy();
    for iy in 0..GRID_SIZE {
        for ix in 0..GRID_SIZE {
            let cell = Cell { ix, iy };
            if occupancy.is_blocked(cell) {
                // Texture multiplier keeps the value strictly positive.
                let u = rng::unit_from_seed(spec.texture_seed, ix as u64, iy as u64);
                grid[CH_OBSTACLE * GRID_SIZE * GRID_SIZE + cell.index()] = 0.5 + 0.5 * u;
            }
        }
    }
    let cells = GRID_SIZE * GRID_SIZE;
    splat(
        &mut grid[CH_OBJECT * cells..(CH_OBJECT + 1) * cells],
        state.object_pos,
    );
    splat(
        &mut grid[CH_GOAL * cells..(CH_GOAL + 1) * cells],
        spec.goal_site.center,
    );

    if let Some(seed) = noise_seed {
        let mut r = rng::rng(seed, "obs-noise", 0, 0);
        for v in grid.iter_mut() {
            let drop = r.random::<f64>() < DROPOUT_P;
            let jitter = r.random::<f64>();
            *v = if drop {
                0.0
            } else {
                (*v + (2.0 * jitter - 1.0) * INTENSITY_JITTER).clamp(0.0, 1.0)
            };
        }
    }

    ObsGrid {
        grid,
        robot: [
            state.ee_pos.x,
            state.ee_pos.y,
            if state.carried { 1.0 } else { 0.0 },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_env_family, reset};
    use crate::grid::cell_of;

    #[test]
    fn clean_render_is_pure() {
        let specs = generate_env_family(3, 5).unwrap();
        for spec in &specs {
            let state = reset(spec, 0);
            let a = render_observation(spec, &state, None);
            let b = render_observation(spec, &state, None);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn obstacle_cells_are_marked() {
        let specs = generate_env_family(5, 13).unwrap();
        for spec in &specs {
            let state = reset(spec, 1);
            let obs = render_observation(spec, &state, None);
            let occupancy = spec.occupancy();
            for iy in 0..GRID_SIZE {
                for ix in 0..GRID_SIZE {
                    let cell = Cell { ix, iy };
                    if occupancy.is_blocked(cell) {
                        assert!(obs.value(CH_OBSTACLE, cell) > 0.0);
                    } else {
                        assert_eq!(obs.value(CH_OBSTACLE, cell), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn values_stay_in_unit_interval_with_and_without_noise() {
        let specs = generate_env_family(4, 17).unwrap();
        for (i, spec) in specs.iter().enumerate() {
            let state = reset(spec, i as u64);
            for noise in [None, Some(123u64), Some(456)] {
                let obs = render_observation(spec, &state, noise);
                assert!(obs.grid.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn noisy_render_is_deterministic_per_seed() {
        let specs = generate_env_family(2, 19).unwrap();
        let state = reset(&specs[0], 0);
        let a = render_observation(&specs[0], &state, Some(9));
        let b = render_observation(&specs[0], &state, Some(9));
        let c = render_observation(&specs[0], &state, Some(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn object_marker_tracks_position() {
        let specs = generate_env_family(2, 23).unwrap();
        let spec = &specs[0];
        let state = reset(spec, 4);
        let obs = render_observation(spec, &state, None);
        let cell = cell_of(state.object_pos);
        // The four splat cells around the object sum to one.
        let cells = GRID_SIZE * GRID_SIZE;
        let total: f64 = obs.grid[CH_OBJECT * cells..(CH_OBJECT + 1) * cells].iter().sum();
        assert!((total - 1.0).abs() < 1e-12 || total <= 1.0);
        assert!(obs.value(CH_OBJECT, cell) > 0.0 || total > 0.0);
    }
}
