//! Tube pigeonholing, bad balls, the good-tangent search, and the multiscale
//! tube families built on top of its output.

mod bad;
mod chain;
mod pigeon;
mod refine;
mod tangent;

pub use bad::{bad_set, ball_tube_masses, detect_bad_ball, BadBallCertificate, BadBallTest, BadSet};
pub use chain::{branching_chain, topdown_refine, BranchingChain, ChainLevel, RefinedChain};
pub use pigeon::{band_of, pigeonhole_masses, pigeonhole_tubes, select_band, Band, PigeonBand};
pub use refine::{nonconcentration_refine, NonConcentration};
pub use tangent::{tangent_search, TangentParams, TangentResult, TraceStep};

use crate::dyadic::{tube_index, Direction, DyadicScale, GridPointSet, TubeFamily};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// `f(n) = base * ratio^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub base: f64,
    pub ratio: f64,
}

impl Default for Growth {
    fn default() -> Self {
        Self {
            base: 10.0,
            ratio: 4.0,
        }
    }
}

impl Growth {
    pub fn eval(&self, n: usize) -> f64 {
        self.base * self.ratio.powi(n as i32)
    }
}

/// `{0, 2^-2N, 2^(-N+2), ..., 1/2, 1}`.
pub fn default_q(n: u32) -> Result<Vec<f64>> {
    if !(2..=12).contains(&n) {
        return Err(Error::InvalidArgument(format!("N = {n} must lie in 2..=12")));
    }
    let mut q = vec![0.0, 2f64.powi(-2 * n as i32)];
    for k in (0..=(n as i32 - 2)).rev() {
        q.push(2f64.powi(-k));
    }
    Ok(q)
}

/// Checks `0 = q_0 < q_1 < ... < q_N = 1` with dyadic entries.
pub fn validate_q(q: &[f64]) -> Result<()> {
    let bad = |why: &str| Err(Error::InvalidArgument(format!("Q {q:?}: {why}")));
    if q.len() < 2 || q[0] != 0.0 || *q.last().unwrap() != 1.0 {
        return bad("must start at 0 and end at 1");
    }
    if q.windows(2).any(|w| w[0] >= w[1]) {
        return bad("must be strictly increasing");
    }
    if q.iter().any(|&x| (x * 2f64.powi(40)).fract() != 0.0) {
        return bad("entries must be dyadic rationals");
    }
    Ok(())
}

/// `round(q K)` for every entry: the exponents of `Delta^q` when `Delta = 2^-K`.
pub fn q_exponents(q: &[f64], k: u32) -> Vec<u32> {
    q.iter().map(|&x| (x * k as f64).round() as u32).collect()
}

/// Masses `nu(B_0 cap T)` of the dyadic `(2^-width_exp, e)`-tubes meeting the support.
pub fn tube_masses(nu: &DiscreteMeasure, e: &Direction, width_exp: u32) -> Vec<(i64, f64)> {
    let mut acc: BTreeMap<i64, f64> = BTreeMap::new();
    let set = nu.support();
    for ((x, y), w) in nu.atoms() {
        let c = set.coords((x, y));
        if c.0 * c.0 + c.1 * c.1 < 1.0 {
            *acc.entry(tube_index(e.dot(c), width_exp)).or_insert(0.0) += w;
        }
    }
    acc.into_iter().collect()
}

/// Points of `set` in `B_0` lying in a tube of `family`.
pub fn points_in_tubes(set: &GridPointSet, family: &TubeFamily) -> GridPointSet {
    let exp = family.width.exponent();
    let e = family.direction;
    set.filter(|p| {
        let c = set.coords(p);
        c.0 * c.0 + c.1 * c.1 < 1.0 && family.contains_index(tube_index(e.dot(c), exp))
    })
}

pub(crate) fn scale(exp: u32) -> DyadicScale {
    DyadicScale::new(exp).expect("exponent within range")
}
