use super::{DyadicScale, GridPointSet};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Projections within this distance of a dyadic boundary go to the right interval.
pub const TIE_EPS: f64 = 1e-12;

/// A unit vector `(cos a, sin a)` with `a` in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    angle: f64,
    cos: f64,
    sin: f64,
}

impl Direction {
    pub fn new(angle: f64) -> Self {
        let mut a = angle.rem_euclid(PI);
        if a >= PI {
            a = 0.0;
        }
        // Exact values on the axes keep axis-parallel projections exact.
        let (cos, sin) = if a == 0.0 {
            (1.0, 0.0)
        } else if a == PI / 2.0 {
            (0.0, 1.0)
        } else {
            (a.cos(), a.sin())
        };
        Self { angle: a, cos, sin }
    }

    /// Rounds the angle to the grid `k pi 2^-grid_exp`.
    pub fn quantized(angle: f64, grid_exp: u32) -> Self {
        let step = PI / f64::powi(2.0, grid_exp as i32);
        let k = (angle.rem_euclid(PI) / step).round();
        Self::new(k * step)
    }

    pub fn from_vector(x: f64, y: f64) -> Self {
        Self::new(y.atan2(x))
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn unit(&self) -> (f64, f64) {
        (self.cos, self.sin)
    }

    /// The unit vector rotated a quarter turn counter-clockwise.
    pub fn perp(&self) -> (f64, f64) {
        (-self.sin, self.cos)
    }

    pub fn dot(&self, p: (f64, f64)) -> f64 {
        p.0 * self.cos + p.1 * self.sin
    }

    pub fn dot_perp(&self, p: (f64, f64)) -> f64 {
        -p.0 * self.sin + p.1 * self.cos
    }

    /// Angular distance in the projective sense (directions mod pi).
    pub fn distance(&self, other: &Direction) -> f64 {
        let d = (self.angle - other.angle).abs();
        d.min(PI - d)
    }
}

/// Index of the dyadic interval of length `2^-exp` containing `v`.
pub fn tube_index(v: f64, exp: u32) -> i64 {
    ((v + TIE_EPS) * f64::powi(2.0, exp as i32)).floor() as i64
}

/// `{p in B_0 : p.e in [index w, (index+1) w)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub direction: Direction,
    pub width: DyadicScale,
    pub index: i64,
}

impl Tube {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 * p.0 + p.1 * p.1 < 1.0
            && tube_index(self.direction.dot(p), self.width.exponent()) == self.index
    }

    /// `true` when this tube lies inside `parent` (same direction, coarser width).
    pub fn is_inside(&self, parent: &Tube) -> bool {
        parent.width.exponent() <= self.width.exponent()
            && self.index >> (self.width.exponent() - parent.width.exponent()) == parent.index
    }
}

/// Dyadic tubes of one width and direction, stored as sorted interval indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeFamily {
    pub direction: Direction,
    pub width: DyadicScale,
    pub indices: Vec<i64>,
}

impl TubeFamily {
    pub fn new(direction: Direction, width: DyadicScale, mut indices: Vec<i64>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self {
            direction,
            width,
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains_index(&self, index: i64) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn tubes(&self) -> impl Iterator<Item = Tube> + '_ {
        self.indices.iter().map(move |&index| Tube {
            direction: self.direction,
            width: self.width,
            index,
        })
    }

    /// Index of the member tube containing `p`, if any.
    pub fn locate(&self, p: (f64, f64)) -> Option<i64> {
        if p.0 * p.0 + p.1 * p.1 >= 1.0 {
            return None;
        }
        let i = tube_index(self.direction.dot(p), self.width.exponent());
        self.contains_index(i).then_some(i)
    }
}

/// Sorted projections `p.e` of every point of `set`.
pub fn project(set: &GridPointSet, e: &Direction) -> Vec<f64> {
    let mut v: Vec<f64> = set.iter_coords().map(|p| e.dot(p)).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// The minimal family of dyadic `(w, e)`-tubes covering `set` inside `B_0`.
pub fn dyadic_tube_cover(set: &GridPointSet, e: &Direction, width: DyadicScale) -> TubeFamily {
    let idx = set
        .iter_coords()
        .filter(|p| p.0 * p.0 + p.1 * p.1 < 1.0)
        .map(|p| tube_index(e.dot(p), width.exponent()))
        .collect();
    TubeFamily::new(*e, width, idx)
}
