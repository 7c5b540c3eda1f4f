use super::{points_in_tubes, q_exponents, scale};
use crate::dyadic::{tube_index, Direction, GridPointSet, TubeFamily};
use crate::measure::DiscreteMeasure;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLevel {
    pub k: usize,
    /// Tubes have width `2^-width_exp = Delta^(q_(N-k))`.
    pub width_exp: u32,
    pub tubes: TubeFamily,
    /// `K^k`.
    pub set: GridPointSet,
    pub mass: f64,
    /// `log2 |T^k| / width_exp`; undefined for unit-width tubes.
    pub t: Option<f64>,
    /// Children per parent lie in `[branching.0, branching.1]`.
    pub branching: Option<(u64, u64)>,
    /// `|t_k - s(e)|`.
    pub t_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingChain {
    pub direction: Direction,
    pub delta_exp: u32,
    pub s_e: f64,
    /// `2 alpha / q_1`.
    pub t_tolerance: f64,
    pub t_within_tolerance: bool,
    pub levels: Vec<ChainLevel>,
    pub telescoping_holds: bool,
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `prod_j |T^(j-1)| / |T^j| == |T^0| / |T^last|` in reduced integer fractions.
fn telescopes(levels: &[ChainLevel]) -> bool {
    let (mut num, mut den) = (1u128, 1u128);
    for w in levels.windows(2) {
        num *= w[0].tubes.len() as u128;
        den *= w[1].tubes.len() as u128;
        let g = gcd(num, den).max(1);
        num /= g;
        den /= g;
    }
    let (a, b) = (
        levels[0].tubes.len() as u128,
        levels.last().map_or(1, |l| l.tubes.len() as u128),
    );
    let g = gcd(a, b).max(1);
    (num, den) == (a / g, b / g)
}

fn t_of(count: usize, width_exp: u32) -> Option<f64> {
    (width_exp > 0 && count > 0).then(|| (count as f64).log2() / width_exp as f64)
}

fn finish(
    direction: Direction,
    delta_exp: u32,
    s_e: f64,
    t_tolerance: f64,
    mut levels: Vec<ChainLevel>,
) -> BranchingChain {
    for l in &mut levels {
        l.t = t_of(l.tubes.len(), l.width_exp);
        l.t_deviation = l.t.map(|t| (t - s_e).abs());
    }
    let t_within_tolerance = levels
        .iter()
        .all(|l| l.t_deviation.map_or(true, |d| d <= t_tolerance));
    let telescoping_holds = telescopes(&levels);
    BranchingChain {
        direction,
        delta_exp,
        s_e,
        t_tolerance,
        t_within_tolerance,
        levels,
        telescoping_holds,
    }
}

/// Builds the coarser families `T^1, ..., T^(N-1)` above `tubes0`.
///
/// At each level the parents of the previous family are grouped by their
/// number of children into dyadic bands and the band carrying the most
/// `nu`-mass of `K^(k-1)` is kept; `K^k = K^(k-1) cap (union T^k)`.
pub fn branching_chain(
    nu: &DiscreteMeasure,
    k0: &GridPointSet,
    tubes0: &TubeFamily,
    q: &[f64],
    s_e: f64,
    alpha: f64,
) -> BranchingChain {
    let e = tubes0.direction;
    let delta_exp = tubes0.width.exponent();
    let exps = q_exponents(q, delta_exp);
    let n = q.len() - 1;
    let t_tolerance = if q.len() > 1 && q[1] > 0.0 { 2.0 * alpha / q[1] } else { f64::INFINITY };
    let set0 = points_in_tubes(k0, tubes0);
    let mut levels = vec![ChainLevel {
        k: 0,
        width_exp: delta_exp,
        mass: nu.mass_of(&set0),
        tubes: tubes0.clone(),
        set: set0,
        t: None,
        branching: None,
        t_deviation: None,
    }];
    for k in 1..n {
        let prev = levels.last().expect("level 0 exists");
        let a = exps[n - k];
        let shift = prev.width_exp - a.min(prev.width_exp);
        let a = prev.width_exp - shift;
        let mut kids: BTreeMap<i64, u64> = BTreeMap::new();
        for &c in &prev.tubes.indices {
            *kids.entry(c >> shift).or_insert(0) += 1;
        }
        let mut mass: BTreeMap<i64, f64> = BTreeMap::new();
        for &p in prev.set.points() {
            let c = prev.set.coords(p);
            *mass.entry(tube_index(e.dot(c), a)).or_insert(0.0) += nu.weight_at(p);
        }
        // Band b holds parents with 2^b <= children < 2^(b+1).
        let mut bands: BTreeMap<u32, f64> = BTreeMap::new();
        for (&parent, &count) in &kids {
            *bands.entry(63 - count.leading_zeros()).or_insert(0.0) +=
                mass.get(&parent).copied().unwrap_or(0.0);
        }
        let mut best = (f64::NEG_INFINITY, 0u32);
        for (&b, &m) in &bands {
            if m > best.0 {
                best = (m, b);
            }
        }
        let chosen: Vec<i64> = kids
            .iter()
            .filter(|(_, &c)| 63 - c.leading_zeros() == best.1)
            .map(|(&p, _)| p)
            .collect();
        let (lo, hi) = kids
            .iter()
            .filter(|(p, _)| chosen.binary_search(p).is_ok())
            .fold((u64::MAX, 0), |(lo, hi), (_, &c)| (lo.min(c), hi.max(c)));
        let tubes = TubeFamily::new(e, scale(a), chosen);
        let set = points_in_tubes(&prev.set, &tubes);
        levels.push(ChainLevel {
            k,
            width_exp: a,
            mass: nu.mass_of(&set),
            tubes,
            set,
            t: None,
            branching: (hi > 0).then_some((lo, hi)),
            t_deviation: None,
        });
    }
    finish(e, delta_exp, s_e, t_tolerance, levels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedChain {
    pub chain: BranchingChain,
    /// `K_e = K^(N-1)`.
    pub k_e: GridPointSet,
    /// `|T^k| / |T~^k|` per level.
    pub audit_factors: Vec<f64>,
    /// Every tube of level `k` lies inside a tube of level `k+1`.
    pub nesting_holds: bool,
    /// `K_e` lies in the union of every level.
    pub contained_holds: bool,
    /// `nu(K_e cap T) = nu(K^k cap T)` for every kept tube.
    pub mass_identity_holds: bool,
}

/// Keeps the top level and drops, level by level downward, every tube not
/// contained in a kept tube of the level above.
pub fn topdown_refine(chain: &BranchingChain, nu: &DiscreteMeasure) -> RefinedChain {
    let e = chain.direction;
    let mut levels = chain.levels.clone();
    for k in (0..levels.len().saturating_sub(1)).rev() {
        let upper = levels[k + 1].tubes.clone();
        let shift = levels[k].width_exp - upper.width.exponent();
        let kept: Vec<i64> = levels[k]
            .tubes
            .indices
            .iter()
            .copied()
            .filter(|&i| upper.contains_index(i >> shift))
            .collect();
        let lvl = &mut levels[k];
        lvl.tubes = TubeFamily::new(e, lvl.tubes.width, kept);
        lvl.set = points_in_tubes(&lvl.set, &lvl.tubes);
        lvl.mass = nu.mass_of(&lvl.set);
    }
    let k_e = levels.last().map(|l| l.set.clone()).unwrap_or_else(|| GridPointSet::empty(scale(0)));

    let nesting_holds = levels.windows(2).all(|w| {
        let shift = w[0].width_exp - w[1].width_exp;
        w[0].tubes.indices.iter().all(|&i| w[1].tubes.contains_index(i >> shift))
    });
    let contained_holds = levels.iter().all(|l| points_in_tubes(&k_e, &l.tubes).len() == k_e.len());
    let mass_identity_holds = chain.levels.iter().zip(&levels).all(|(before, after)| {
        let w = after.width_exp;
        let mut lhs: BTreeMap<i64, f64> = BTreeMap::new();
        let mut rhs: BTreeMap<i64, f64> = BTreeMap::new();
        for &p in k_e.points() {
            let t = tube_index(e.dot(k_e.coords(p)), w);
            if after.tubes.contains_index(t) {
                *lhs.entry(t).or_insert(0.0) += nu.weight_at(p);
            }
        }
        for &p in before.set.points() {
            let t = tube_index(e.dot(before.set.coords(p)), w);
            if after.tubes.contains_index(t) {
                *rhs.entry(t).or_insert(0.0) += nu.weight_at(p);
            }
        }
        let keys: BTreeSet<i64> = lhs.keys().chain(rhs.keys()).copied().collect();
        keys.iter().all(|t| {
            let (a, b) = (lhs.get(t).copied().unwrap_or(0.0), rhs.get(t).copied().unwrap_or(0.0));
            (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
        })
    });
    let audit_factors = chain
        .levels
        .iter()
        .zip(&levels)
        .map(|(b, a)| a.tubes.len() as f64 / b.tubes.len().max(1) as f64)
        .collect();
    let refined = finish(e, chain.delta_exp, chain.s_e, chain.t_tolerance, levels);
    RefinedChain {
        chain: refined,
        k_e,
        audit_factors,
        nesting_holds,
        contained_holds,
        mass_identity_holds,
    }
}
