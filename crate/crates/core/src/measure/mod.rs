//! Finitely supported measures on the dyadic grid, balls, and blow-ups.

mod index;
mod io;
mod ops;

pub use index::BallIndex;
pub use io::{read_measure_csv, write_measure_csv};
pub use ops::{
    blowup, chain_rule_check, compose_balls, frostman_defect, measures_agree, quasiregularity_constant,
    thin_ball_set, ChainRuleReport, FrostmanDefect, QuasiRegularity,
};

use crate::dyadic::{pow2, DyadicScale, GridPointSet};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The open ball `B(c, 2^-k)` with a grid-aligned center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ball {
    /// Numerators of the center over `2^-center_exp`.
    pub center: (i64, i64),
    pub center_exp: u32,
    pub radius: DyadicScale,
}

impl Ball {
    pub fn new(center: (i64, i64), center_exp: u32, radius: DyadicScale) -> Self {
        Self {
            center,
            center_exp,
            radius,
        }
    }

    pub fn unit() -> Self {
        Self::new((0, 0), 0, DyadicScale::new(0).expect("exponent 0"))
    }

    pub fn center_f64(&self) -> (f64, f64) {
        let s = pow2(-(self.center_exp as i32));
        (self.center.0 as f64 * s, self.center.1 as f64 * s)
    }

    pub fn radius_f64(&self) -> f64 {
        self.radius.value()
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let c = self.center_f64();
        let r = self.radius_f64();
        let (dx, dy) = (p.0 - c.0, p.1 - c.1);
        dx * dx + dy * dy < r * r
    }

    /// Center numerators over the finer grid `2^-exp`, if the center lies on it.
    pub fn center_at(&self, exp: u32) -> Option<(i64, i64)> {
        if exp >= self.center_exp {
            let k = exp - self.center_exp;
            Some((self.center.0 << k, self.center.1 << k))
        } else {
            let k = self.center_exp - exp;
            let mask = (1i64 << k) - 1;
            if self.center.0 & mask == 0 && self.center.1 & mask == 0 {
                Some((self.center.0 >> k, self.center.1 >> k))
            } else {
                None
            }
        }
    }
}

/// A measure `sum_p w_p delta_p` with strictly positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    support: GridPointSet,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Merges repeated points, drops zero weights and rejects negative or non-finite ones.
    pub fn new(scale: DyadicScale, mut atoms: Vec<((i64, i64), f64)>) -> Result<Self> {
        if let Some(bad) = atoms.iter().find(|a| !(a.1 >= 0.0 && a.1.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "weight {} at {:?} is not a finite non-negative number",
                bad.1, bad.0
            )));
        }
        atoms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut pts: Vec<(i64, i64)> = Vec::with_capacity(atoms.len());
        let mut weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for (p, w) in atoms {
            if pts.last() == Some(&p) {
                *weights.last_mut().expect("parallel vectors") += w;
            } else {
                pts.push(p);
                weights.push(w);
            }
        }
        let (pts, weights): (Vec<_>, Vec<_>) = pts
            .into_iter()
            .zip(weights)
            .filter(|(_, w)| *w > 0.0)
            .unzip();
        Ok(Self {
            support: GridPointSet::new(scale, pts),
            weights,
        })
    }

    /// Equal weight on every point of `set`.
    pub fn uniform(set: &GridPointSet, weight: f64) -> Result<Self> {
        Self::new(
            set.scale(),
            set.points().iter().map(|&p| (p, weight)).collect(),
        )
    }

    /// Normalized counting measure on `set`.
    pub fn counting(set: &GridPointSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::InvalidArgument("empty support".into()));
        }
        Self::uniform(set, 1.0 / set.len() as f64)
    }

    pub(crate) fn from_sorted(support: GridPointSet, weights: Vec<f64>) -> Self {
        debug_assert_eq!(support.len(), weights.len());
        Self { support, weights }
    }

    pub fn scale(&self) -> DyadicScale {
        self.support.scale()
    }

    pub fn support(&self) -> &GridPointSet {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = ((i64, i64), f64)> + '_ {
        self.support.points().iter().copied().zip(self.weights.iter().copied())
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mass_in_unit_ball(&self) -> f64 {
        self.atoms()
            .filter(|(p, _)| self.support.in_unit_ball(*p))
            .map(|(_, w)| w)
            .sum()
    }

    pub fn weight_at(&self, p: (i64, i64)) -> f64 {
        self.support.position(p).map_or(0.0, |i| self.weights[i])
    }

    pub fn restrict(&self, mut keep: impl FnMut((i64, i64)) -> bool) -> DiscreteMeasure {
        let (pts, w): (Vec<_>, Vec<_>) = self.atoms().filter(|(p, _)| keep(*p)).unzip();
        Self::from_sorted(GridPointSet::new(self.scale(), pts), w)
    }

    /// The restriction to the points of `set` (which must share the grid).
    pub fn restrict_to(&self, set: &GridPointSet) -> DiscreteMeasure {
        assert_eq!(set.scale(), self.scale(), "restriction needs a common grid");
        self.restrict(|p| set.contains(p))
    }

    /// Mass of the points of `set`.
    pub fn mass_of(&self, set: &GridPointSet) -> f64 {
        set.points().iter().map(|&p| self.weight_at(p)).sum()
    }

    pub fn scaled(&self, c: f64) -> DiscreteMeasure {
        Self::from_sorted(
            self.support.clone(),
            self.weights.iter().map(|w| w * c).collect(),
        )
    }

    pub fn normalized(&self) -> Result<DiscreteMeasure> {
        let m = self.mass();
        if m <= 0.0 {
            return Err(Error::degenerate("normalize", "zero mass"));
        }
        Ok(self.scaled(1.0 / m))
    }

    pub fn index(&self) -> BallIndex {
        BallIndex::new(&self.support)
    }

    /// `mu(B(center, radius))` for the open ball, using a prebuilt index.
    pub fn mass_in_ball(&self, index: &BallIndex, center: (f64, f64), radius: f64) -> f64 {
        let mut m = 0.0;
        index.for_each_in_ball(center, radius, |i| m += self.weights[i]);
        m
    }
}
