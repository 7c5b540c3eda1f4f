use super::{Ball, BallIndex, DiscreteMeasure};
use crate::dyadic::{DyadicScale, GridPointSet};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrostmanDefect {
    /// `max mu(B(x,r)) / r^d` over support points and tested radii.
    pub ratio: f64,
    pub witness: Option<Ball>,
}

/// Largest ratio `mu(B(x,r)) / r^d` over `x` in the support and `r` in `radii`.
pub fn frostman_defect(mu: &DiscreteMeasure, d: f64, radii: &[DyadicScale]) -> FrostmanDefect {
    let index = mu.index();
    let exp = mu.scale().exponent();
    let mut best = FrostmanDefect {
        ratio: 0.0,
        witness: None,
    };
    for &p in mu.support().points() {
        let c = mu.support().coords(p);
        for &r in radii {
            let ratio = mu.mass_in_ball(&index, c, r.value()) / r.value().powf(d);
            if ratio > best.ratio {
                best = FrostmanDefect {
                    ratio,
                    witness: Some(Ball::new(p, exp, r)),
                };
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiRegularity {
    /// Smallest `C` with `N(set cap B(x,R), r) <= C (R/r)^(d+eps)` on all tested triples.
    pub constant: f64,
    pub witness: Option<(Ball, DyadicScale)>,
}

/// Empirical quasiregularity constant over balls centered at points of `set`.
///
/// Each pair is `(R, r)` with `r <= R`; pairs with `r` finer than the set
/// scale are rejected.
pub fn quasiregularity_constant(
    set: &GridPointSet,
    d: f64,
    eps: f64,
    pairs: &[(DyadicScale, DyadicScale)],
) -> Result<QuasiRegularity> {
    for &(big, small) in pairs {
        if !big.coarser_or_equal(small) || !small.coarser_or_equal(set.scale()) {
            return Err(Error::InvalidScale(format!(
                "pair (2^-{}, 2^-{}) is not ordered above the set scale",
                big.exponent(),
                small.exponent()
            )));
        }
    }
    let index = BallIndex::new(set);
    let exp = set.scale().exponent();
    let mut bigs: Vec<DyadicScale> = pairs.iter().map(|p| p.0).collect();
    bigs.sort_unstable();
    bigs.dedup();
    let mut best = QuasiRegularity {
        constant: 0.0,
        witness: None,
    };
    let mut members = Vec::new();
    let mut cells = Vec::new();
    for &p in set.points() {
        let c = set.coords(p);
        for &big in &bigs {
            members.clear();
            index.for_each_in_ball(c, big.value(), |i| members.push(set.points()[i]));
            for &(b, small) in pairs.iter().filter(|q| q.0 == big) {
                cells.clear();
                cells.extend(members.iter().map(|&q| set.cell_of(q, small.exponent())));
                cells.sort_unstable();
                cells.dedup();
                let ratio = b.value() / small.value();
                let c_needed = cells.len() as f64 / ratio.powf(d + eps);
                if c_needed > best.constant {
                    best = QuasiRegularity {
                        constant: c_needed,
                        witness: Some((Ball::new(p, exp, b), small)),
                    };
                }
            }
        }
    }
    Ok(best)
}

/// The blow-up `T_B(mu) / r^d` with `T_B(y) = (y - c)/r`.
///
/// The ball must have a dyadic radius no smaller than the grid step and a
/// center on the measure's grid, so the image lives on the grid
/// `2^-(exp - k)` and every coordinate stays exact.
pub fn blowup(mu: &DiscreteMeasure, ball: &Ball, d: f64) -> Result<DiscreteMeasure> {
    let e = mu.scale().exponent();
    let c = ball.center_at(e).ok_or_else(|| {
        Error::UnsupportedBall(format!(
            "center over 2^-{} is not on the grid 2^-{e}",
            ball.center_exp
        ))
    })?;
    let k = ball.radius.exponent();
    if k > e {
        return Err(Error::InvalidScale(format!(
            "radius 2^-{k} is below the grid step 2^-{e}; the blown-up scale would exceed 1"
        )));
    }
    let factor = 2f64.powf(k as f64 * d);
    let pts: Vec<(i64, i64)> = mu
        .support()
        .points()
        .iter()
        .map(|&(x, y)| (x - c.0, y - c.1))
        .collect();
    let weights = mu.weights().iter().map(|w| w * factor).collect();
    // Translation keeps the lexicographic order.
    Ok(DiscreteMeasure::from_sorted(
        GridPointSet::new(DyadicScale::new(e - k)?, pts),
        weights,
    ))
}

/// Atom-by-atom comparison with relative tolerance; returns the largest relative error.
pub fn measures_agree(a: &DiscreteMeasure, b: &DiscreteMeasure, rel_tol: f64) -> (bool, f64) {
    if a.scale() != b.scale() || a.support() != b.support() {
        return (false, f64::INFINITY);
    }
    let mut worst: f64 = 0.0;
    for (wa, wb) in a.weights().iter().zip(b.weights()) {
        let err = (wa - wb).abs() / wa.abs().max(wb.abs());
        worst = worst.max(err);
    }
    (worst <= rel_tol, worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleReport {
    pub agrees: bool,
    pub max_relative_error: f64,
    /// `(T_{B'} o T_B)^{-1}(B_0)`, in the original coordinates.
    pub composite: Ball,
}

/// `(T_inner o T_outer)^{-1}(B_0)`: the ball `B(c + r c', r r')` where
/// `inner = B(c', r')` is given in the blown-up coordinates of `outer = B(c, r)`.
pub fn compose_balls(outer: &Ball, inner: &Ball) -> Result<Ball> {
    let k1 = outer.radius.exponent();
    let x = outer.center_exp.max(inner.center_exp + k1);
    let cx = (outer.center.0 << (x - outer.center_exp))
        + (inner.center.0 << (x - inner.center_exp - k1));
    let cy = (outer.center.1 << (x - outer.center_exp))
        + (inner.center.1 << (x - inner.center_exp - k1));
    Ok(Ball::new(
        (cx, cy),
        x,
        DyadicScale::new(k1 + inner.radius.exponent())?,
    ))
}

/// Compares `(mu^B)^{B'}` with `mu^{B''}` where `B'` is given in blown-up
/// coordinates and `B''` is the composite ball `B(c + r c', r r')`.
pub fn chain_rule_check(
    mu: &DiscreteMeasure,
    outer: &Ball,
    inner: &Ball,
    d: f64,
) -> Result<ChainRuleReport> {
    let lhs = blowup(&blowup(mu, outer, d)?, inner, d)?;
    let composite = compose_balls(outer, inner)?;
    let rhs = blowup(mu, &composite, d)?;
    let (agrees, max_relative_error) = measures_agree(&lhs, &rhs, 1e-9);
    Ok(ChainRuleReport {
        agrees,
        max_relative_error,
        composite,
    })
}

/// `{x in E : mu(E cap B(x,R)) <= r^eps R^d}`.
pub fn thin_ball_set(
    mu: &DiscreteMeasure,
    e_set: &GridPointSet,
    r: f64,
    eps: f64,
    big: DyadicScale,
    d: f64,
) -> GridPointSet {
    let nu = mu.restrict_to(e_set);
    let index = nu.index();
    let threshold = r.powf(eps) * big.value().powf(d);
    e_set.filter(|p| nu.mass_in_ball(&index, e_set.coords(p), big.value()) <= threshold)
}
