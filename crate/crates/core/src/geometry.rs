//! Integer grid geometry shared by every layer: positions, rectangles and
//! the two distance metrics the simulator uses.
//!
//! Euclidean distance governs movement caps and audio falloff; Chebyshev
//! distance governs sensing windows and goal proximity.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A grid cell coordinate. Ordered row-major, i.e. by `(y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Position {
    pub x: i32,
    pub y: i32,
}

impl Position {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn euclidean(self, other: Position) -> f64 {
        let dx = f64::from(self.x - other.x);
        let dy = f64::from(self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn chebyshev(self, other: Position) -> u32 {
        (self.x - other.x)
            .unsigned_abs()
            .max((self.y - other.y).unsigned_abs())
    }

    pub fn manhattan(self, other: Position) -> u32 {
        (self.x - other.x).unsigned_abs() + (self.y - other.y).unsigned_abs()
    }

    /// The four orthogonal neighbours, in N, W, E, S order.
    pub fn neighbors4(self) -> [Position; 4] {
        [
            Position::new(self.x, self.y - 1),
            Position::new(self.x - 1, self.y),
            Position::new(self.x + 1, self.y),
            Position::new(self.x, self.y + 1),
        ]
    }
}

impl Ord for Position {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Position {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Axis-aligned rectangle of cells, `[x0, x0 + width) × [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub const fn new(x0: i32, y0: i32, width: u32, height: u32) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    /// Rectangle anchored at the origin.
    pub const fn sized(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    /// Smallest rectangle containing both corners (inclusive).
    pub fn spanning(a: Position, b: Position) -> Self {
        let x0 = a.x.min(b.x);
        let y0 = a.y.min(b.y);
        Self::new(
            x0,
            y0,
            (a.x.max(b.x) - x0) as u32 + 1,
            (a.y.max(b.y) - y0) as u32 + 1,
        )
    }

    pub fn x1(&self) -> i32 {
        self.x0 + self.width as i32
    }

    pub fn y1(&self) -> i32 {
        self.y0 + self.height as i32
    }

    pub fn area(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.x0 && p.x < self.x1() && p.y >= self.y0 && p.y < self.y1()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.is_empty()
            || (other.x0 >= self.x0
                && other.y0 >= self.y0
                && other.x1() <= self.x1()
                && other.y1() <= self.y1())
    }

    pub fn center(&self) -> Position {
        Position::new(
            self.x0 + (self.width as i32 - 1).max(0) / 2,
            self.y0 + (self.height as i32 - 1).max(0) / 2,
        )
    }

    /// Grow by `margin` cells on every side.
    pub fn expand(&self, margin: u32) -> Rect {
        let m = margin as i32;
        Rect::new(
            self.x0 - m,
            self.y0 - m,
            self.width + 2 * margin,
            self.height + 2 * margin,
        )
    }

    /// Intersection, or an empty rect at `self`'s origin when disjoint.
    pub fn intersect(&self, other: &Rect) -> Rect {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        if x1 <= x0 || y1 <= y0 {
            return Rect::new(self.x0, self.y0, 0, 0);
        }
        Rect::new(x0, y0, (x1 - x0) as u32, (y1 - y0) as u32)
    }

    /// Nearest cell of the rectangle to `p`.
    pub fn clamp(&self, p: Position) -> Position {
        Position::new(
            p.x.clamp(self.x0, self.x1() - 1),
            p.y.clamp(self.y0, self.y1() - 1),
        )
    }

    /// Square window of Chebyshev radius `radius` around `center`.
    pub fn window(center: Position, radius: u32) -> Rect {
        let r = radius as i32;
        Rect::new(center.x - r, center.y - r, 2 * radius + 1, 2 * radius + 1)
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Position> + '_ {
        let (x0, x1) = (self.x0, self.x1());
        (self.y0..self.y1()).flat_map(move |y| (x0..x1).map(move |x| Position::new(x, y)))
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{},{} {}x{}]",
            self.x0, self.y0, self.width, self.height
        )
    }
}

/// Integer cells on the segment from `from` to `to`, both ends included.
pub fn line_cells(from: Position, to: Position) -> Vec<Position> {
    let dx = (to.x - from.x).abs();
    let dy = -(to.y - from.y).abs();
    let sx = if from.x < to.x { 1 } else { -1 };
    let sy = if from.y < to.y { 1 } else { -1 };
    let mut err = dx + dy;
    let mut cur = from;
    let mut out = vec![cur];
    while cur != to {
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            cur.x += sx;
        }
        if e2 <= dx {
            err += dx;
            cur.y += sy;
        }
        out.push(cur);
    }
    out
}

/// Angle-like key in `[0, 4)` for `p` around `origin`, monotone in the true
/// polar angle. Uses only ratios, so results are bit-reproducible.
pub fn pseudo_angle(origin: Position, p: Position) -> f64 {
    let dx = f64::from(p.x - origin.x);
    let dy = f64::from(p.y - origin.y);
    let sum = dx.abs() + dy.abs();
    if sum == 0.0 {
        return 0.0;
    }
    let r = dy / sum;
    if dx >= 0.0 {
        if r >= 0.0 {
            r
        } else {
            4.0 + r
        }
    } else {
        2.0 - r
    }
}
