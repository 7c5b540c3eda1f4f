//! Dyadic scales, grid point sets, directions and tubes.
//!
//! Coordinates are stored as integer numerators over a shared power of two,
//! so every grid computation (cell membership, nesting, blow-up) is exact.

mod covering;
mod direction;
mod io;

pub use covering::{
    assouad_exponent, assouad_exponent_1d, covering_number, covering_number_in_ball,
    AssouadEstimate, AssouadEstimate1D, AssouadWitness, AssouadWitness1D,
};
pub use direction::{dyadic_tube_cover, project, tube_index, Direction, Tube, TubeFamily, TIE_EPS};
pub use io::{read_grid_binary, read_grid_csv, write_grid_binary, write_grid_csv};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest exponent accepted anywhere; keeps numerators well inside `i64`.
pub const MAX_EXPONENT: u32 = 52;

/// The dyadic number `2^-exp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DyadicScale {
    exp: u32,
}

impl DyadicScale {
    pub fn new(exp: u32) -> Result<Self> {
        if exp > MAX_EXPONENT {
            return Err(Error::InvalidScale(format!(
                "exponent {exp} exceeds {MAX_EXPONENT}"
            )));
        }
        Ok(Self { exp })
    }

    /// Parses a positive real that must be an exact power of two not exceeding 1.
    pub fn from_value(value: f64) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::InvalidScale(format!("{value} is not in (0, 1]")));
        }
        let exp = (-value.log2()).round();
        if exp < 0.0 || exp > MAX_EXPONENT as f64 || pow2(-(exp as i32)) != value {
            return Err(Error::InvalidScale(format!("{value} is not a power of two")));
        }
        Ok(Self { exp: exp as u32 })
    }

    pub fn exponent(self) -> u32 {
        self.exp
    }

    pub fn value(self) -> f64 {
        pow2(-(self.exp as i32))
    }

    /// `true` when `self` is at least as coarse as `other`.
    pub fn coarser_or_equal(self, other: DyadicScale) -> bool {
        self.exp <= other.exp
    }
}

/// Exact `2^k` for moderate `k`.
pub fn pow2(k: i32) -> f64 {
    f64::powi(2.0, k)
}

/// A dyadic interval `[num 2^-exp, (num+1) 2^-exp)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub num: i64,
    pub exp: u32,
}

impl DyadicInterval {
    pub fn left(self) -> f64 {
        self.num as f64 * pow2(-(self.exp as i32))
    }

    pub fn length(self) -> f64 {
        pow2(-(self.exp as i32))
    }

    pub fn contains(self, x: f64) -> bool {
        let l = self.left();
        x >= l && x < l + self.length()
    }

    /// The ancestor of this interval at the coarser exponent `exp`.
    pub fn ancestor(self, exp: u32) -> DyadicInterval {
        assert!(exp <= self.exp);
        DyadicInterval {
            num: self.num >> (self.exp - exp),
            exp,
        }
    }
}

/// A finite set of points on the grid `2^-exp Z^2`, sorted lexicographically.
///
/// Generated and loaded sets live in `[-1,1)^2`; blown-up measures may carry
/// points outside that window, and operations that work on the unit ball
/// ignore them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPointSet {
    scale: DyadicScale,
    points: Vec<(i64, i64)>,
}

impl GridPointSet {
    pub fn new(scale: DyadicScale, mut points: Vec<(i64, i64)>) -> Self {
        points.sort_unstable();
        points.dedup();
        Self { scale, points }
    }

    pub fn empty(scale: DyadicScale) -> Self {
        Self {
            scale,
            points: Vec::new(),
        }
    }

    /// Builds a set and checks every point lies in `[-1,1)^2`.
    pub fn in_window(scale: DyadicScale, points: Vec<(i64, i64)>) -> Result<Self> {
        let set = Self::new(scale, points);
        if !set.in_unit_window() {
            return Err(Error::InvalidArgument(
                "points must lie in [-1,1)^2".to_string(),
            ));
        }
        Ok(set)
    }

    /// All points `(i, j) 2^-exp` with both coordinates in `[lo, hi)`.
    pub fn full_grid(scale: DyadicScale, lo: f64, hi: f64) -> Self {
        let n = 1i64 << scale.exp;
        let a = (lo * n as f64).ceil() as i64;
        let b = (hi * n as f64).ceil() as i64;
        let mut pts = Vec::with_capacity(((b - a).max(0) as usize).pow(2));
        for x in a..b {
            for y in a..b {
                pts.push((x, y));
            }
        }
        Self::new(scale, pts)
    }

    pub fn scale(&self) -> DyadicScale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(i64, i64)] {
        &self.points
    }

    pub fn coords(&self, p: (i64, i64)) -> (f64, f64) {
        let s = self.scale.value();
        (p.0 as f64 * s, p.1 as f64 * s)
    }

    pub fn iter_coords(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().map(move |&p| self.coords(p))
    }

    pub fn contains(&self, p: (i64, i64)) -> bool {
        self.points.binary_search(&p).is_ok()
    }

    pub fn position(&self, p: (i64, i64)) -> Option<usize> {
        self.points.binary_search(&p).ok()
    }

    pub fn in_unit_window(&self) -> bool {
        let n = 1i64 << self.scale.exp;
        self.points
            .iter()
            .all(|&(x, y)| x >= -n && x < n && y >= -n && y < n)
    }

    /// Points strictly inside the closed unit ball `|p| < 1`.
    pub fn in_unit_ball(&self, p: (i64, i64)) -> bool {
        let (x, y) = self.coords(p);
        x * x + y * y < 1.0
    }

    /// Indices of the dyadic cells of side `2^-exp` containing each point.
    pub fn cell_of(&self, p: (i64, i64), exp: u32) -> (i64, i64) {
        let shift = self.scale.exp - exp;
        (p.0 >> shift, p.1 >> shift)
    }

    pub fn intersection(&self, other: &GridPointSet) -> GridPointSet {
        assert_eq!(self.scale, other.scale);
        let pts = self
            .points
            .iter()
            .copied()
            .filter(|p| other.contains(*p))
            .collect();
        GridPointSet {
            scale: self.scale,
            points: pts,
        }
    }

    pub fn is_subset_of(&self, other: &GridPointSet) -> bool {
        self.scale == other.scale && self.points.iter().all(|p| other.contains(*p))
    }

    pub fn filter(&self, mut keep: impl FnMut((i64, i64)) -> bool) -> GridPointSet {
        GridPointSet {
            scale: self.scale,
            points: self.points.iter().copied().filter(|&p| keep(p)).collect(),
        }
    }

    /// Translates by a grid vector given in numerators.
    pub fn translate(&self, by: (i64, i64)) -> GridPointSet {
        GridPointSet {
            scale: self.scale,
            points: self
                .points
                .iter()
                .map(|&(x, y)| (x + by.0, y + by.1))
                .collect(),
        }
    }
}

/// A finite set of points on `2^-exp Z`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicSet1D {
    scale: DyadicScale,
    points: Vec<i64>,
}

impl DyadicSet1D {
    pub fn new(scale: DyadicScale, mut points: Vec<i64>) -> Self {
        points.sort_unstable();
        points.dedup();
        Self { scale, points }
    }

    pub fn scale(&self) -> DyadicScale {
        self.scale
    }

    pub fn points(&self) -> &[i64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        let s = self.scale.value();
        self.points.iter().map(|&p| p as f64 * s).collect()
    }
}
