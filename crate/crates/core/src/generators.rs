//! Test subjects: self-similar attractors, products, simple curves, and
//! Frostman-type direction sets.

use crate::dyadic::{tube_index, Direction, DyadicScale, DyadicSet1D, GridPointSet};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::smoothing::DeltaMeasure1D;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

/// `x -> ratio * Rot(2 pi angle_turns) x + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub ratio: f64,
    #[serde(default)]
    pub angle_turns: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AffineMap {
    fn linear(&self) -> [[f64; 2]; 2] {
        let a = 2.0 * PI * self.angle_turns;
        let (c, s) = if self.has_exact_rotation() {
            match (4.0 * self.angle_turns).rem_euclid(4.0) as i32 {
                0 => (1.0, 0.0),
                1 => (0.0, 1.0),
                2 => (-1.0, 0.0),
                _ => (0.0, -1.0),
            }
        } else {
            (a.cos(), a.sin())
        };
        [[self.ratio * c, -self.ratio * s], [self.ratio * s, self.ratio * c]]
    }

    fn has_exact_rotation(&self) -> bool {
        let q = 4.0 * self.angle_turns;
        q == q.round()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsSystem {
    pub maps: Vec<AffineMap>,
}

impl IfsSystem {
    pub fn new(maps: Vec<AffineMap>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidArgument("an IFS needs at least one map".into()));
        }
        if let Some(m) = maps.iter().find(|m| !(m.ratio > 0.0 && m.ratio < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "contraction ratio {} is not in (0,1)",
                m.ratio
            )));
        }
        Ok(Self { maps })
    }

    /// Parses `{"maps": [{"ratio": .., "angle_turns": .., "tx": .., "ty": ..}, ..]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let sys: IfsSystem =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(sys.maps)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("IFS serializes")
    }

    /// Maps `x -> x/b + (i, j)/b` for the chosen cells of a `b x b` subdivision
    /// of `[0,1)^2`, shifted by `offset`.
    pub fn grid(b: u32, cells: &[(u32, u32)], offset: (f64, f64)) -> Result<Self> {
        let r = 1.0 / b as f64;
        let maps = cells
            .iter()
            .map(|&(i, j)| AffineMap {
                ratio: r,
                angle_turns: 0.0,
                tx: i as f64 * r + offset.0 * (1.0 - r),
                ty: j as f64 * r + offset.1 * (1.0 - r),
            })
            .collect();
        Self::new(maps)
    }

    /// The four-corner set: ratio 1/4 at the corners of `[0,1]^2`.
    pub fn four_corner() -> Self {
        Self::grid(4, &[(0, 0), (3, 0), (0, 3), (3, 3)], (0.0, 0.0)).expect("valid")
    }

    /// The four-corner set in `[-1/2, 1/2]^2`, well inside the unit ball.
    pub fn four_corner_centered() -> Self {
        Self::grid(4, &[(0, 0), (3, 0), (0, 3), (3, 3)], (-0.5, -0.5)).expect("valid")
    }

    /// `count` distinct cells of the `b x b` subdivision, drawn from a seeded shuffle,
    /// placed in `[-1/2, 1/2]^2`.
    pub fn random_grid(seed: u64, b: u32, count: usize) -> Result<Self> {
        let mut cells: Vec<(u32, u32)> = (0..b).flat_map(|i| (0..b).map(move |j| (i, j))).collect();
        if count == 0 || count > cells.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot pick {count} of {} cells",
                cells.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cells.shuffle(&mut rng);
        cells.truncate(count);
        cells.sort_unstable();
        Self::grid(b, &cells, (-0.5, -0.5))
    }

    pub fn is_approximate(&self) -> bool {
        self.maps.iter().any(|m| !m.has_exact_rotation())
    }

    fn fixed_point(m: &AffineMap) -> (f64, f64) {
        let a = m.linear();
        // (I - A) x = t
        let (p, q, r, s) = (1.0 - a[0][0], -a[0][1], -a[1][0], 1.0 - a[1][1]);
        let det = p * s - q * r;
        ((s * m.tx - q * m.ty) / det, (p * m.ty - r * m.tx) / det)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attractor {
    pub set: GridPointSet,
    pub measure: DiscreteMeasure,
    pub depth: u32,
    /// Rotations by angles other than quarter turns make cell assignment approximate.
    pub approximate: bool,
}

/// Rasterizes the attractor at scale `delta`.
///
/// Iterates to the first depth `n` with `max ratio^n <= delta`, maps the fixed
/// point of the first map through every word of length `n`, and records the
/// `delta`-cell of each image. Every word carries mass `m^-n`.
pub fn ifs_attractor(sys: &IfsSystem, delta: DyadicScale, max_cells: u64) -> Result<Attractor> {
    let rmax = sys.maps.iter().map(|m| m.ratio).fold(0.0, f64::max);
    let dv = delta.value();
    let mut depth = 0u32;
    let mut size = 1.0;
    while size > dv * (1.0 + 1e-12) {
        size *= rmax;
        depth += 1;
    }
    let m = sys.maps.len() as u64;
    let words = (m as f64).powi(depth as i32);
    if words > max_cells as f64 {
        return Err(Error::Resource(format!(
            "{m}^{depth} words exceed the cell budget {max_cells}"
        )));
    }
    let lin: Vec<[[f64; 2]; 2]> = sys.maps.iter().map(|m| m.linear()).collect();
    let p0 = IfsSystem::fixed_point(&sys.maps[0]);
    let w = 1.0 / words;
    let exp = delta.exponent();
    let mut cells: HashMap<(i64, i64), f64> = HashMap::new();
    let mut order: Vec<(i64, i64)> = Vec::new();
    // Depth-first over words; each frame holds the accumulated affine map.
    type Frame = ([[f64; 2]; 2], (f64, f64), u32);
    let mut stack: Vec<Frame> = vec![([[1.0, 0.0], [0.0, 1.0]], (0.0, 0.0), 0)];
    while let Some((a, b, k)) = stack.pop() {
        if k == depth {
            let x = a[0][0] * p0.0 + a[0][1] * p0.1 + b.0;
            let y = a[1][0] * p0.0 + a[1][1] * p0.1 + b.1;
            let key = (tube_index(x, exp), tube_index(y, exp));
            let e = cells.entry(key).or_insert_with(|| {
                order.push(key);
                0.0
            });
            *e += w;
            continue;
        }
        for (i, mp) in sys.maps.iter().enumerate().rev() {
            let l = &lin[i];
            let na = [
                [
                    a[0][0] * l[0][0] + a[0][1] * l[1][0],
                    a[0][0] * l[0][1] + a[0][1] * l[1][1],
                ],
                [
                    a[1][0] * l[0][0] + a[1][1] * l[1][0],
                    a[1][0] * l[0][1] + a[1][1] * l[1][1],
                ],
            ];
            let nb = (
                a[0][0] * mp.tx + a[0][1] * mp.ty + b.0,
                a[1][0] * mp.tx + a[1][1] * mp.ty + b.1,
            );
            stack.push((na, nb, k + 1));
        }
    }
    let atoms: Vec<((i64, i64), f64)> = order.into_iter().map(|k| (k, cells[&k])).collect();
    let measure = DiscreteMeasure::new(delta, atoms)?;
    if !measure.support().in_unit_window() {
        return Err(Error::InvalidArgument(
            "attractor leaves the window [-1,1)^2".into(),
        ));
    }
    Ok(Attractor {
        set: measure.support().clone(),
        measure,
        depth,
        approximate: sys.is_approximate(),
    })
}

/// `A x B` for sets on the same grid.
pub fn product_set(a: &DyadicSet1D, b: &DyadicSet1D) -> Result<GridPointSet> {
    if a.scale() != b.scale() {
        return Err(Error::InvalidScale("factors live on different grids".into()));
    }
    let pts = a
        .points()
        .iter()
        .flat_map(|&x| b.points().iter().map(move |&y| (x, y)))
        .collect();
    Ok(GridPointSet::new(a.scale(), pts))
}

/// The product measure `mu x nu`.
pub fn product_measure(a: &DeltaMeasure1D, b: &DeltaMeasure1D) -> Result<DiscreteMeasure> {
    if a.scale() != b.scale() {
        return Err(Error::InvalidScale("factors live on different grids".into()));
    }
    let atoms = a
        .atoms()
        .iter()
        .flat_map(|&(x, wx)| b.atoms().iter().map(move |&(y, wy)| ((x, y), wx * wy)))
        .collect();
    DiscreteMeasure::new(a.scale(), atoms)
}

/// The `base`-adic Cantor measure keeping `digits` at every level, on
/// `offset + [0,1)` at scale `base^-levels` (`base` a power of two).
pub fn cantor_1d(base: u32, digits: &[u32], levels: u32, offset: f64) -> Result<DeltaMeasure1D> {
    if !base.is_power_of_two() || base < 2 {
        return Err(Error::InvalidArgument("base must be a power of two".into()));
    }
    if digits.is_empty() || digits.iter().any(|&d| d >= base) {
        return Err(Error::InvalidArgument("digits must lie in [0, base)".into()));
    }
    let bits = base.trailing_zeros();
    let scale = DyadicScale::new(bits * levels)?;
    let shift = (offset * (1u64 << scale.exponent()) as f64).round() as i64;
    let mut pos = vec![0i64];
    for _ in 0..levels {
        pos = pos
            .iter()
            .flat_map(|&p| digits.iter().map(move |&d| p * base as i64 + d as i64))
            .collect();
    }
    DeltaMeasure1D::counting(scale, &pos.iter().map(|p| p + shift).collect::<Vec<_>>())
}

/// Uniform measure on the horizontal segment `[-1/2, 1/2) x {0}` at scale `delta`,
/// with total mass `mass`.
pub fn horizontal_segment(delta: DyadicScale, mass: f64) -> Result<DiscreteMeasure> {
    let n = 1i64 << delta.exponent();
    let pts: Vec<(i64, i64)> = (-n / 2..n / 2).map(|x| (x, 0)).collect();
    let w = mass / pts.len() as f64;
    DiscreteMeasure::new(delta, pts.into_iter().map(|p| (p, w)).collect())
}

/// A staircase of horizontal steps of length `2^-step_exp` climbing the diagonal
/// of `[-1/2, 1/2)^2`, as a probability measure at scale `delta`.
pub fn staircase(delta: DyadicScale, step_exp: u32) -> Result<DiscreteMeasure> {
    if step_exp > delta.exponent() {
        return Err(Error::InvalidScale("steps finer than the grid".into()));
    }
    let n = 1i64 << delta.exponent();
    let shift = delta.exponent() - step_exp;
    let pts: Vec<(i64, i64)> = (-n / 2..n / 2)
        .map(|x| (x, ((x + n / 2) >> shift << shift) - n / 2))
        .collect();
    let w = 1.0 / pts.len() as f64;
    DiscreteMeasure::new(delta, pts.into_iter().map(|p| (p, w)).collect())
}

/// A weighted finite set of directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSet {
    pub directions: Vec<Direction>,
    pub weights: Vec<f64>,
}

impl DirectionSet {
    /// Equal weights; the total is 1.
    pub fn from_directions(directions: Vec<Direction>) -> Self {
        let w = 1.0 / directions.len().max(1) as f64;
        let weights = vec![w; directions.len()];
        Self { directions, weights }
    }

    /// `n` equally spaced angles `k pi / n`.
    pub fn uniform(n: usize) -> Self {
        Self::from_directions((0..n).map(|k| Direction::new(k as f64 * PI / n as f64)).collect())
    }

    pub fn single(angle: f64) -> Self {
        Self::from_directions(vec![Direction::new(angle)])
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn mass_of(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.weights[i]).sum()
    }

    /// `sigma(B(center, radius))` in the projective angle metric.
    pub fn arc_mass(&self, center: f64, radius: f64) -> f64 {
        let c = Direction::new(center);
        self.directions
            .iter()
            .zip(&self.weights)
            .filter(|(d, _)| d.distance(&c) < radius)
            .map(|(_, w)| w)
            .sum()
    }

    /// Smallest `C` with `sigma(B(e, r)) <= C r^eps0` over members `e` and `radii`.
    pub fn frostman_constant(&self, eps0: f64, radii: &[f64]) -> f64 {
        let mut c: f64 = 0.0;
        for d in &self.directions {
            for &r in radii {
                c = c.max(self.arc_mass(d.angle(), r) / r.powf(eps0));
            }
        }
        c
    }
}

/// Range-add / range-max segment tree over a cyclic index set.
struct CyclicMaxTree {
    n: usize,
    size: usize,
    max: Vec<i64>,
    add: Vec<i64>,
}

impl CyclicMaxTree {
    fn new(n: usize) -> Self {
        let size = n.next_power_of_two();
        Self {
            n,
            size,
            max: vec![0; 2 * size],
            add: vec![0; 2 * size],
        }
    }

    fn update(&mut self, node: usize, lo: usize, hi: usize, a: usize, b: usize, v: i64) {
        if b <= lo || hi <= a {
            return;
        }
        if a <= lo && hi <= b {
            self.max[node] += v;
            self.add[node] += v;
            return;
        }
        let mid = (lo + hi) / 2;
        self.update(2 * node, lo, mid, a, b, v);
        self.update(2 * node + 1, mid, hi, a, b, v);
        self.max[node] = self.add[node] + self.max[2 * node].max(self.max[2 * node + 1]);
    }

    fn query(&self, node: usize, lo: usize, hi: usize, a: usize, b: usize) -> i64 {
        if b <= lo || hi <= a {
            return i64::MIN;
        }
        if a <= lo && hi <= b {
            return self.max[node];
        }
        let mid = (lo + hi) / 2;
        let m = self
            .query(2 * node, lo, mid, a, b)
            .max(self.query(2 * node + 1, mid, hi, a, b));
        m.saturating_add(self.add[node])
    }

    /// Cyclic half-open range `[start, start + len)`.
    fn ranges(&self, start: isize, len: usize) -> Vec<(usize, usize)> {
        let n = self.n as isize;
        let s = start.rem_euclid(n) as usize;
        if s + len <= self.n {
            vec![(s, s + len)]
        } else {
            vec![(s, self.n), (0, s + len - self.n)]
        }
    }

    fn range_add(&mut self, start: isize, len: usize, v: i64) {
        for (a, b) in self.ranges(start, len) {
            self.update(1, 0, self.size, a, b, v);
        }
    }

    fn range_max(&self, start: isize, len: usize) -> i64 {
        self.ranges(start, len)
            .into_iter()
            .map(|(a, b)| self.query(1, 0, self.size, a, b))
            .max()
            .unwrap_or(i64::MIN)
    }
}

/// Greedy `(delta, eps0)`-set of directions.
///
/// Walks a seeded shuffle of the `delta`-net `{k delta : (k+1) delta <= pi}` and keeps
/// a direction whenever every arc of radius `r = delta 2^j <= 1` still holds at
/// most `2 (r/delta)^eps0` kept directions. An open arc of radius `delta 2^j`
/// meets at most `2^(j+1)` consecutive net points, so windows of that length
/// cover every arc position.
pub fn direction_frostman_set(eps0: f64, delta: f64, seed: u64) -> Result<DirectionSet> {
    if !(0.0..=1.0).contains(&eps0) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(
            "need eps0 in [0,1] and delta in (0,1]".into(),
        ));
    }
    // Keep every gap, including the one across pi ~ 0, at least delta.
    let n = (PI / delta).floor() as usize;
    let mut levels = Vec::new();
    let mut j = 0u32;
    while delta * f64::powi(2.0, j as i32) <= 1.0 {
        let len = 1usize << (j + 1);
        let bound = (2.0 * f64::powi(2.0, j as i32).powf(eps0) + 1e-9).floor() as i64;
        levels.push((len.min(n), bound));
        j += 1;
    }
    let mut trees: Vec<CyclicMaxTree> = levels.iter().map(|_| CyclicMaxTree::new(n)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut kept = Vec::new();
    for i in order {
        let ok = levels.iter().zip(&trees).all(|(&(len, bound), tree)| {
            tree.range_max(i as isize - len as isize + 1, len) < bound
        });
        if ok {
            for (&(len, _), tree) in levels.iter().zip(trees.iter_mut()) {
                tree.range_add(i as isize - len as isize + 1, len, 1);
            }
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(DirectionSet::from_directions(
        kept.into_iter().map(|k| Direction::new(k as f64 * delta)).collect(),
    ))
}
