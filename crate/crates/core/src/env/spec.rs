use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{GOAL_RADIUS, HOME, OBJECT_JITTER};
use crate::error::{Error, Result};
use crate::geom::{point_in_any_interior, Point, Rect};
use crate::grid::{cell_of, Cell, OccupancyGrid, GRID_SIZE};
use crate::rng;

/// Schema tag written as the first line of an environment file.
pub const ENVS_SCHEMA: &str = "envs.v1";

/// Goal site: a disk the object must end up in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSite {
    pub center: Point,
    pub radius: f64,
}

/// One environment of the family: obstacle layout, goal site, and object
/// reset distribution. Generation is deterministic in (family seed, index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    pub layout_seed: u64,
    pub obstacles: Vec<Rect>,
    pub goal_site: GoalSite,
    pub object_nominal: Point,
    pub object_jitter: f64,
    pub texture_seed: u64,
}

impl EnvSpec {
    pub fn occupancy(&self) -> OccupancyGrid {
        OccupancyGrid::from_obstacles(&self.obstacles)
    }
}

/// Generation limits. Layouts are rejected until the scripted
/// demonstrator is guaranteed to finish within the episode budget from
/// any jittered object position.
const MAX_ATTEMPTS_PER_SPEC: usize = 1000;
pub(crate) const MAX_TOTAL_PATH_HOPS: u32 = 17;
pub(crate) const MIN_OBJECT_GOAL_SEPARATION: f64 = 0.25;

/// Generate `count` feasibility-checked environments, deterministic in
/// `family_seed`. Prefixes are stable: the first k specs of a family do
/// not depend on `count`.
pub fn generate_env_family(count: usize, family_seed: u64) -> Result<Vec<EnvSpec>> {
    (0..count)
        .map(|index| generate_one(family_seed, index))
        .collect()
}

fn generate_one(family_seed: u64, index: usize) -> Result<EnvSpec> {
    let layout_seed = rng::derive(family_seed, "env-gen", index as u64, 0);
    let mut r = rng::rng(family_seed, "env-gen", index as u64, 0);
    for _ in 0..MAX_ATTEMPTS_PER_SPEC {
        let n_obstacles = r.random_range(1..=4usize);
        let mut obstacles = Vec::with_capacity(n_obstacles);
        for _ in 0..n_obstacles {
            let w = r.random_range(0.05..=0.3);
            let h = r.random_range(0.05..=0.3);
            let x0 = r.random_range(0.0..=1.0 - w);
            let y0 = r.random_range(0.0..=1.0 - h);
            obstacles.push(Rect::new(x0, y0, x0 + w, y0 + h));
        }
        let goal_center = Point::new(r.random_range(0.1..=0.9), r.random_range(0.1..=0.9));
        let nominal = Point::new(r.random_range(0.12..=0.88), r.random_range(0.12..=0.88));
        let texture_seed = r.random::<u64>();

        let candidate = EnvSpec {
            env_id: format!("env-{family_seed:x}-{index:03}"),
            layout_seed,
            obstacles,
            goal_site: GoalSite {
                center: goal_center,
                radius: GOAL_RADIUS,
            },
            object_nominal: nominal,
            object_jitter: OBJECT_JITTER,
            texture_seed,
        };
        if layout_feasible(&candidate) {
            return Ok(candidate);
        }
    }
    Err(Error::GenerationExhausted {
        family_seed,
        index,
        attempts: MAX_ATTEMPTS_PER_SPEC,
    })
}

/// Feasibility: home, goal, and the whole jittered object region must be
/// connected by free-cell paths short enough for the episode budget.
fn layout_feasible(spec: &EnvSpec) -> bool {
    if point_in_any_interior(&spec.obstacles, spec.object_nominal) {
        return false;
    }
    if spec.object_nominal.dist(spec.goal_site.center) < MIN_OBJECT_GOAL_SEPARATION {
        return false;
    }
    let grid = spec.occupancy();
    let home_cell = cell_of(HOME);
    let goal_cell = cell_of(spec.goal_site.center);
    let nominal_cell = cell_of(spec.object_nominal);
    if grid.is_blocked(home_cell) || grid.is_blocked(goal_cell) || grid.is_blocked(nominal_cell) {
        return false;
    }
    let none = OccupancyGrid::no_extra_blocked();
    let from_home = grid.distance_field(home_cell, &none);
    let from_goal = grid.distance_field(goal_cell, &none);

    // Every free cell the jittered object can land in must admit a short
    // round trip home -> object -> goal.
    for cell in jitter_cells(spec) {
        if grid.is_blocked(cell) {
            continue;
        }
        match (from_home[cell.index()], from_goal[cell.index()]) {
            (Some(dh), Some(dg)) => {
                if dh + dg > MAX_TOTAL_PATH_HOPS {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

/// Cells intersecting the object jitter box.
fn jitter_cells(spec: &EnvSpec) -> Vec<Cell> {
    let j = spec.object_jitter;
    let lo = Point::new(spec.object_nominal.x - j, spec.object_nominal.y - j).clamp_unit();
    let hi = Point::new(spec.object_nominal.x + j, spec.object_nominal.y + j).clamp_unit();
    let c0 = cell_of(lo);
    let c1 = cell_of(hi);
    let mut cells = Vec::new();
    for iy in c0.iy..=c1.iy.min(GRID_SIZE - 1) {
        for ix in c0.ix..=c1.ix.min(GRID_SIZE - 1) {
            cells.push(Cell { ix, iy });
        }
    }
    cells
}

/// Write specs as line-delimited JSON with a schema header line.
pub fn write_envs_jsonl(specs: &[EnvSpec], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "{}", serde_json::json!({ "schema": ENVS_SCHEMA }))?;
    for spec in specs {
        writeln!(out, "{}", serde_json::to_string(spec)?)?;
    }
    Ok(())
}

/// Read an environment file written by [`write_envs_jsonl`].
pub fn read_envs_jsonl(path: &Path) -> Result<Vec<EnvSpec>> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.ok_or_else(|| Error::Format {
        path: path.display().to_string(),
        detail: "empty file".into(),
    })?;
    let header: serde_json::Value = serde_json::from_str(&header)?;
    if header.get("schema").and_then(|v| v.as_str()) != Some(ENVS_SCHEMA) {
        return Err(Error::Format {
            path: path.display().to_string(),
            detail: format!("expected schema header {ENVS_SCHEMA:?}"),
        });
    }
    let mut specs = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        specs.push(serde_json::from_str(&line)?);
    }
    Ok(specs)
}
