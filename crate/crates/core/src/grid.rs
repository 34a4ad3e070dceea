//! Occupancy grid over the unit square, used for feasibility checks and
//! scripted path planning. A cell is blocked when its open interior
//! overlaps any obstacle, so the union of free cells is guaranteed
//! collision-free.

use std::collections::VecDeque;

use crate::geom::{Point, Rect};

/// Grid resolution along each axis.
pub const GRID_SIZE: usize = 16;
/// Side length of one cell.
pub const CELL_SIZE: f64 = 1.0 / GRID_SIZE as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub ix: usize,
    pub iy: usize,
}

impl Cell {
    pub fn index(self) -> usize {
        self.iy * GRID_SIZE + self.ix
    }

    pub fn center(self) -> Point {
        Point::new(
            (self.ix as f64 + 0.5) * CELL_SIZE,
            (self.iy as f64 + 0.5) * CELL_SIZE,
        )
    }

    pub fn rect(self) -> Rect {
        Rect::new(
            self.ix as f64 * CELL_SIZE,
            self.iy as f64 * CELL_SIZE,
            (self.ix + 1) as f64 * CELL_SIZE,
            (self.iy + 1) as f64 * CELL_SIZE,
        )
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.ix.abs_diff(other.ix) + self.iy.abs_diff(other.iy)
    }
}

/// Cell containing `p`. Points on the top/right boundary map to the last cell.
pub fn cell_of(p: Point) -> Cell {
    let ix = ((p.x / CELL_SIZE) as usize).min(GRID_SIZE - 1);
    let iy = ((p.y / CELL_SIZE) as usize).min(GRID_SIZE - 1);
    Cell { ix, iy }
}

#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    blocked: Vec<bool>,
}

impl OccupancyGrid {
    pub fn from_obstacles(obstacles: &[Rect]) -> Self {
        let mut blocked = vec![false; GRID_SIZE * GRID_SIZE];
        for iy in 0..GRID_SIZE {
            for ix in 0..GRID_SIZE {
                let cell = Cell { ix, iy };
                let r = cell.rect();
                if obstacles.iter().any(|o| o.intersects_open(&r)) {
                    blocked[cell.index()] = true;
                }
            }
        }
        OccupancyGrid { blocked }
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[c.index()]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        !self.blocked[c.index()]
    }

    fn neighbors(c: Cell) -> impl Iterator<Item = Cell> {
        // Fixed order keeps BFS parents, and hence paths, deterministic.
        const DELTAS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        DELTAS.into_iter().filter_map(move |(dx, dy)| {
            let ix = c.ix as isize + dx;
            let iy = c.iy as isize + dy;
            if (0..GRID_SIZE as isize).contains(&ix) && (0..GRID_SIZE as isize).contains(&iy) {
                Some(Cell {
                    ix: ix as usize,
                    iy: iy as usize,
                })
            } else {
                None
            }
        })
    }

    /// BFS hop distances from `from` over free cells. `None` marks
    /// unreachable or blocked cells. Extra blocked cells can be supplied to
    /// force detours (used for multimodal route planning).
    pub fn distance_field(&self, from: Cell, extra_blocked: &[bool]) -> Vec<Option<u32>> {
        let mut dist = vec![None; GRID_SIZE * GRID_SIZE];
        if self.is_blocked(from) || extra_blocked.get(from.index()).copied().unwrap_or(false) {
            return dist;
        }
        dist[from.index()] = Some(0);
        let mut queue = VecDeque::new();
        queue.push_back(from);
        while let Some(c) = queue.pop_front() {
            let d = dist[c.index()].unwrap();
            for n in Self::neighbors(c) {
                if self.is_blocked(n) || extra_blocked.get(n.index()).copied().unwrap_or(false) {
                    continue;
                }
                if dist[n.index()].is_none() {
                    dist[n.index()] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Shortest cell path from `from` to `to` inclusive, or `None`.
    /// Deterministic for fixed inputs.
    pub fn shortest_path(&self, from: Cell, to: Cell, extra_blocked: &[bool]) -> Option<Vec<Cell>> {
        let dist = self.distance_field(to, extra_blocked);
        dist[from.index()]?;
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            let d = dist[cur.index()].unwrap();
            let next = Self::neighbors(cur)
                .find(|n| dist[n.index()] == Some(d - 1))
                .expect("distance field is locally decreasing");
            path.push(next);
            cur = next;
        }
        Some(path)
    }

    pub fn no_extra_blocked() -> Vec<bool> {
        vec![false; GRID_SIZE * GRID_SIZE]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_path_is_manhattan() {
        let g = OccupancyGrid::from_obstacles(&[]);
        let a = Cell { ix: 1, iy: 1 };
        let b = Cell { ix: 10, iy: 7 };
        let path = g
            .shortest_path(a, b, &OccupancyGrid::no_extra_blocked())
            .unwrap();
        assert_eq!(path.len(), a.manhattan(b) + 1);
        assert_eq!(*path.first().unwrap(), a);
        assert_eq!(*path.last().unwrap(), b);
    }

    #[test]
    fn wall_forces_detour_and_blocked_is_unreachable() {
        // Vertical wall with one gap at the top.
        let wall = Rect::new(0.45, 0.0, 0.55, 0.9);
        let g = OccupancyGrid::from_obstacles(&[wall]);
        let a = cell_of(Point::new(0.1, 0.1));
        let b = cell_of(Point::new(0.9, 0.1));
        let path = g
            .shortest_path(a, b, &OccupancyGrid::no_extra_blocked())
            .unwrap();
        assert!(path.len() > a.manhattan(b) + 1);
        assert!(path.iter().all(|c| g.is_free(*c)));

        // Fully enclosing box -> unreachable.
        let box_walls = [
            Rect::new(0.3, 0.3, 0.7, 0.35),
            Rect::new(0.3, 0.65, 0.7, 0.7),
            Rect::new(0.3, 0.3, 0.35, 0.7),
            Rect::new(0.65, 0.3, 0.7, 0.7),
        ];
        let g = OccupancyGrid::from_obstacles(&box_walls);
        let inside = cell_of(Point::new(0.5, 0.5));
        let outside = cell_of(Point::new(0.1, 0.1));
        assert!(g
            .shortest_path(outside, inside, &OccupancyGrid::no_extra_blocked())
            .is_none());
    }

    #[test]
    fn free_cells_do_not_touch_obstacle_interiors() {
        let obs = [Rect::new(0.31, 0.22, 0.58, 0.47)];
        let g = OccupancyGrid::from_obstacles(&obs);
        for iy in 0..GRID_SIZE {
            for ix in 0..GRID_SIZE {
                let c = Cell { ix, iy };
                if g.is_free(c) {
                    assert!(!obs[0].intersects_open(&c.rect()));
                }
            }
        }
    }
}
