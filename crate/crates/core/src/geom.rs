use serde::{Deserialize, Serialize};

/// A point in workspace coordinates. The workspace is the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// Clamp into the unit square.
    pub fn clamp_unit(self) -> Point {
        Point {
            x: self.x.clamp(0.0, 1.0),
            y: self.y.clamp(0.0, 1.0),
        }
    }
}

/// Axis-aligned rectangle, `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        debug_assert!(x0 <= x1 && y0 <= y1);
        Rect { x0, y0, x1, y1 }
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn half_extents(&self) -> (f64, f64) {
        (0.5 * (self.x1 - self.x0), 0.5 * (self.y1 - self.y0))
    }

    /// True when `p` lies strictly inside. Points on faces are outside.
    pub fn contains_interior(&self, p: Point) -> bool {
        p.x > self.x0 && p.x < self.x1 && p.y > self.y0 && p.y < self.y1
    }

    /// True when the open interiors of the two rectangles overlap.
    pub fn intersects_open(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn inside_unit_square(&self) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= 1.0 && self.y1 <= 1.0
    }
}

/// True when `p` is strictly inside any of the rectangles.
pub fn point_in_any_interior(obstacles: &[Rect], p: Point) -> bool {
    obstacles.iter().any(|r| r.contains_interior(p))
}
