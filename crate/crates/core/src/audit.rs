//! Non-concentration audits of `mu_v` and `theta mu_v`, and the arc chain
//! over the surviving directions.

use crate::dyadic::{tube_index, Direction};
use crate::error::{Error, Result};
use crate::generators::DirectionSet;
use crate::measure::DiscreteMeasure;
use crate::quasi_product::QuasiProduct;
use crate::smoothing::DeltaMeasure1D;
use crate::tubes::{NonConcentration, RefinedChain};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditParams {
    pub d: f64,
    /// `s(e1)`.
    pub s_e1: f64,
    pub alpha: f64,
    pub q1: f64,
    /// `Delta = 2^-delta_exp`.
    pub delta_exp: u32,
    /// Slack multiplying every benchmark.
    pub audit_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMass {
    /// Index of the dyadic interval at `interval_exp`.
    pub index: i64,
    pub count: usize,
    /// `mu_v(I) = |D_v cap I| / |D_v|`.
    pub mass: f64,
    /// `(Delta^p)^(d - t_th) |D_v cap I|`.
    pub approx: f64,
    /// `(Delta^p)^(-t_th) nu(T0 cap K_e1 cap pi_2^-1(I))`.
    pub tube_path: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub interval_exp: u32,
    pub intervals: Vec<IntervalMass>,
    pub max_mass: f64,
    /// `-log2(max_mass) / interval_exp` when the intervals are shorter than 1.
    pub measured_exponent: Option<f64>,
    /// `Delta^(q1 (d - s(e1)) - 4 alpha / q1)`.
    pub benchmark: f64,
    pub pass: bool,
    /// `(Delta^p)^(-t_th) |T^0(T0)| max nu(T) ball_ratio`, bounding every `tube_path`.
    pub bound: f64,
    pub bound_holds: bool,
    /// `|T^0(T0)|`.
    pub fine_tubes_in_t0: usize,
}

/// `mu_v(I)` on every dyadic `Delta^q1`-interval meeting `D_v`, with the
/// tube-count bound path through `K_e1` and the non-concentration ratio.
pub fn mu_v_concentration(
    qp: &QuasiProduct,
    chain: &RefinedChain,
    nc: Option<&NonConcentration>,
    nu: &DiscreteMeasure,
    params: &AuditParams,
) -> Result<ConcentrationReport> {
    let nc = nc.ok_or_else(|| Error::Dependency("non-concentration data for e1".into()))?;
    let levels = &chain.chain.levels;
    let fine = levels
        .first()
        .ok_or_else(|| Error::Dependency("branching chain has no levels".into()))?;
    let k = params.delta_exp;
    let a_s = (params.q1 * k as f64).round() as u32;
    let a_p = qp.grids.side_exp;
    let e1 = qp.direction;
    let n_v = qp.grids.d_v.len();
    if n_v == 0 {
        return Err(Error::degenerate("audit", "D_v is empty"));
    }

    let interval_of = |j: i64| -> i64 {
        if a_s <= a_p {
            j >> (a_p - a_s)
        } else {
            j << (a_s - a_p)
        }
    };
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &j in &qp.grids.d_v {
        *counts.entry(interval_of(j)).or_insert(0) += 1;
    }

    let support = nu.support();
    let mut path: BTreeMap<i64, f64> = BTreeMap::new();
    for &p in chain.k_e.points() {
        let c = support.coords(p);
        if tube_index(e1.dot(c), a_p) == qp.t0 {
            *path.entry(tube_index(e1.dot_perp(c), a_s)).or_insert(0.0) += nu.weight_at(p);
        }
    }

    let norm = 2f64.powf(a_p as f64 * qp.t_th);
    let approx_unit = 2f64.powf(-(a_p as f64) * (params.d - qp.t_th));
    let intervals: Vec<IntervalMass> = counts
        .iter()
        .map(|(&index, &count)| IntervalMass {
            index,
            count,
            mass: count as f64 / n_v as f64,
            approx: approx_unit * count as f64,
            tube_path: path.get(&index).copied().unwrap_or(0.0) * norm,
        })
        .collect();
    let max_mass = intervals.iter().map(|i| i.mass).fold(0.0, f64::max);

    // Fine tubes inside T0 and their full masses.
    let shift = fine.width_exp - a_p.min(fine.width_exp);
    let inside: Vec<i64> =
        fine.tubes.indices.iter().copied().filter(|&t| t >> shift == qp.t0).collect();
    let mut tube_mass: BTreeMap<i64, f64> = BTreeMap::new();
    for (p, w) in nu.atoms() {
        let c = support.coords(p);
        if c.0 * c.0 + c.1 * c.1 < 1.0 {
            let t = tube_index(e1.dot(c), fine.width_exp);
            if inside.binary_search(&t).is_ok() {
                *tube_mass.entry(t).or_insert(0.0) += w;
            }
        }
    }
    let heaviest = tube_mass.values().copied().fold(0.0, f64::max);
    let bound = norm * inside.len() as f64 * heaviest * nc.ball_ratio;
    let bound_holds = intervals.iter().all(|i| i.tube_path <= bound * (1.0 + 1e-12));

    let benchmark = 2f64.powf(
        -(a_s as f64) * (params.d - params.s_e1) + k as f64 * 4.0 * params.alpha / params.q1,
    );
    Ok(ConcentrationReport {
        interval_exp: a_s,
        measured_exponent: (a_s > 0).then(|| -max_mass.log2() / a_s as f64),
        pass: max_mass <= params.audit_factor * benchmark,
        intervals,
        max_mass,
        benchmark,
        bound,
        bound_holds,
        fine_tubes_in_t0: inside.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaConcentration {
    pub theta: f64,
    /// Largest `(theta mu_v)([a, a + 2^-window_exp))` over all real `a`.
    pub max_mass: f64,
    /// A left endpoint attaining the maximum.
    pub window_left: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Largest mass of `theta mu_v` in a half-open interval of length `2^-window_exp`.
///
/// Fails when `|theta|` is below `theta_floor`.
pub fn theta_pushforward_concentration(
    mu_v: &DeltaMeasure1D,
    theta: f64,
    window_exp: u32,
    theta_floor: f64,
    threshold: f64,
) -> Result<ThetaConcentration> {
    if !(theta.abs() >= theta_floor) {
        return Err(Error::Precondition(format!(
            "|theta| = {} is below the floor {theta_floor}",
            theta.abs()
        )));
    }
    let len = 2f64.powi(-(window_exp as i32));
    let mut pts: Vec<(f64, f64)> = mu_v.real_atoms().into_iter().map(|(x, w)| (theta * x, w)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Some optimal window starts at an atom.
    let (mut hi, mut acc) = (0usize, 0.0);
    let mut best = (0.0, pts.first().map_or(0.0, |p| p.0));
    for lo in 0..pts.len() {
        while hi < pts.len() && pts[hi].0 < pts[lo].0 + len {
            acc += pts[hi].1;
            hi += 1;
        }
        if acc > best.0 {
            best = (acc, pts[lo].0);
        }
        acc -= pts[lo].1;
    }
    Ok(ThetaConcentration {
        theta,
        max_mass: best.0,
        window_left: best.1,
        threshold,
        pass: best.0 <= threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub center: f64,
    pub radius: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcChain {
    /// `J_1 ⊃ J_2 ⊃ ...`, one arc per radius.
    pub arcs: Vec<Arc>,
    pub final_mass: f64,
    /// `C_sigma Delta^eps0`.
    pub frostman_bound: f64,
    pub within_bound: bool,
}

/// Signed angular offset from `from` to `to`, in `[-pi/2, pi/2)`.
fn offset(from: f64, to: f64) -> f64 {
    (to - from + PI / 2.0).rem_euclid(PI) - PI / 2.0
}

/// Greedy nested arcs of the given decreasing radii, each of maximal
/// `sigma`-mass among arcs inside the previous one (ties to the first candidate).
pub fn arc_chain(
    sigma: &DirectionSet,
    radii: &[f64],
    c_sigma: f64,
    eps0: f64,
    delta: f64,
) -> Result<ArcChain> {
    if sigma.is_empty() {
        return Err(Error::degenerate("arc_chain", "no surviving directions"));
    }
    if radii.windows(2).any(|w| w[1] > w[0]) || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument("arc radii must be positive and decreasing".into()));
    }
    let angles: Vec<f64> = sigma.directions.iter().map(Direction::angle).collect();
    let mut arcs: Vec<Arc> = Vec::new();
    for &r in radii {
        let candidates: Vec<f64> = match arcs.last() {
            None => angles.clone(),
            Some(prev) => {
                let room = prev.radius - r;
                let mut c = vec![prev.center];
                c.extend(angles.iter().filter_map(|&a| {
                    let o = offset(prev.center, a);
                    (o.abs() < prev.radius).then(|| prev.center + o.clamp(-room, room))
                }));
                c
            }
        };
        let mut best = Arc {
            center: candidates[0],
            radius: r,
            mass: f64::NEG_INFINITY,
        };
        for &c in &candidates {
            let m = sigma.arc_mass(c, r);
            if m > best.mass {
                best = Arc {
                    center: c,
                    radius: r,
                    mass: m,
                };
            }
        }
        arcs.push(best);
    }
    let final_mass = arcs.last().map_or(0.0, |a| a.mass);
    let frostman_bound = c_sigma * delta.powf(eps0);
    Ok(ArcChain {
        arcs,
        final_mass,
        frostman_bound,
        within_bound: final_mass <= frostman_bound,
    })
}
