use super::{DyadicScale, GridPointSet};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

const EXPONENT_TIE: f64 = 1e-12;

/// Number of dyadic `r`-squares meeting `set`.
pub fn covering_number(set: &GridPointSet, r: DyadicScale) -> Result<usize> {
    if !r.coarser_or_equal(set.scale()) {
        return Err(Error::InvalidScale(format!(
            "covering scale 2^-{} is finer than the set scale 2^-{}",
            r.exponent(),
            set.scale().exponent()
        )));
    }
    let mut cells: Vec<(i64, i64)> = set
        .points()
        .iter()
        .map(|&p| set.cell_of(p, r.exponent()))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    Ok(cells.len())
}

/// Number of dyadic `r`-squares meeting `set` intersected with the open ball `B(center, radius)`.
pub fn covering_number_in_ball(
    set: &GridPointSet,
    center: (f64, f64),
    radius: f64,
    r: DyadicScale,
) -> Result<usize> {
    if r.value() > radius {
        return Err(Error::InvalidArgument(format!(
            "covering scale {} exceeds the ball radius {radius}",
            r.value()
        )));
    }
    let inside = set.filter(|p| {
        let (x, y) = set.coords(p);
        let (dx, dy) = (x - center.0, y - center.1);
        dx * dx + dy * dy < radius * radius
    });
    covering_number(&inside, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssouadWitness {
    /// Smallest point of the localizing cell.
    pub center: (f64, f64),
    pub big: DyadicScale,
    pub small: DyadicScale,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssouadEstimate {
    pub exponent: f64,
    pub witness: Option<AssouadWitness>,
}

fn witness_key(w: &AssouadWitness) -> (f64, f64, u32, u32) {
    (w.center.0, w.center.1, w.big.exponent(), w.small.exponent())
}

fn better(cand: f64, cw: &AssouadWitness, best: f64, bw: Option<&AssouadWitness>) -> bool {
    match bw {
        None => true,
        Some(bw) => {
            if cand > best + EXPONENT_TIE {
                true
            } else if cand < best - EXPONENT_TIE {
                false
            } else {
                witness_key(cw).partial_cmp(&witness_key(bw)) == Some(Ordering::Less)
            }
        }
    }
}

/// Finite-scale Assouad exponent
/// `max log2 N(set cap Q, r) / log2(R/r)` over dyadic cells `Q` of side `R`
/// meeting the set, with `R` in `radii` and `r = R 2^-j` for `j` in `ratios`.
///
/// Localizing to dyadic cells keeps the estimate in `[0, 2]`; pairs with
/// `r` finer than the set scale are skipped.
pub fn assouad_exponent(
    set: &GridPointSet,
    radii: &[DyadicScale],
    ratios: &[u32],
) -> Result<AssouadEstimate> {
    let e = set.scale().exponent();
    let mut best = 0.0;
    let mut best_w: Option<AssouadWitness> = None;
    let mut any_pair = false;
    for &big in radii {
        for &j in ratios {
            if j == 0 || big.exponent() + j > e {
                continue;
            }
            any_pair = true;
            if set.is_empty() {
                continue;
            }
            let a = big.exponent();
            let small = DyadicScale::new(a + j)?;
            let mut keyed: Vec<((i64, i64), (i64, i64), (i64, i64))> = set
                .points()
                .iter()
                .map(|&p| (set.cell_of(p, a), set.cell_of(p, a + j), p))
                .collect();
            keyed.sort_unstable();
            let mut i = 0;
            while i < keyed.len() {
                let parent = keyed[i].0;
                let mut count = 0usize;
                let mut last_child = None;
                let mut min_point = keyed[i].2;
                let mut k = i;
                while k < keyed.len() && keyed[k].0 == parent {
                    if last_child != Some(keyed[k].1) {
                        count += 1;
                        last_child = Some(keyed[k].1);
                    }
                    min_point = min_point.min(keyed[k].2);
                    k += 1;
                }
                let exponent = (count as f64).log2() / j as f64;
                let w = AssouadWitness {
                    center: set.coords(min_point),
                    big,
                    small,
                    count,
                };
                if better(exponent, &w, best, best_w.as_ref()) {
                    best = exponent;
                    best_w = Some(w);
                }
                i = k;
            }
        }
    }
    if !any_pair {
        return Err(Error::InvalidScale(
            "no scale pair is at least as coarse as the set scale".to_string(),
        ));
    }
    Ok(AssouadEstimate {
        exponent: best,
        witness: best_w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssouadWitness1D {
    pub center: f64,
    pub big: DyadicScale,
    pub small: DyadicScale,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssouadEstimate1D {
    pub exponent: f64,
    pub witness: Option<AssouadWitness1D>,
}

/// Finite-scale Assouad exponent of a set of reals.
///
/// For every point `x`, radius `R` and `r = R 2^-j >= min_scale`, counts the
/// minimal number of open intervals of radius `r` covering the set inside
/// `(x - R, x + R)`. The greedy left-to-right cover is optimal on the line,
/// so the estimate is invariant under translation and reflection and lies in
/// `[0, 1]`.
pub fn assouad_exponent_1d(
    values: &[f64],
    radii: &[DyadicScale],
    ratios: &[u32],
    min_scale: f64,
) -> AssouadEstimate1D {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let n = v.len();
    let mut best = 0.0;
    let mut best_w: Option<AssouadWitness1D> = None;
    if n == 0 {
        return AssouadEstimate1D {
            exponent: 0.0,
            witness: None,
        };
    }
    let levels = usize::BITS as usize - n.leading_zeros() as usize;
    for &big in radii {
        let rr = big.value();
        for &j in ratios {
            let Ok(small) = DyadicScale::new(big.exponent() + j) else {
                continue;
            };
            let r = small.value();
            if j == 0 || r < min_scale {
                continue;
            }
            // up[t][i]: index reached after 2^t greedy intervals starting at i.
            let mut up: Vec<Vec<usize>> = Vec::with_capacity(levels);
            let mut first: Vec<usize> = Vec::with_capacity(n + 1);
            let mut k = 0;
            for i in 0..n {
                while k < n && v[k] - v[i] < 2.0 * r {
                    k += 1;
                }
                first.push(k);
            }
            first.push(n);
            up.push(first);
            for t in 1..levels {
                let prev = &up[t - 1];
                let next: Vec<usize> = (0..=n).map(|i| prev[prev[i]]).collect();
                up.push(next);
            }
            let mut lo = 0;
            let mut hi = 0;
            for c in 0..n {
                let x = v[c];
                while lo < n && v[lo] <= x - rr {
                    lo += 1;
                }
                while hi < n && v[hi] < x + rr {
                    hi += 1;
                }
                let mut i = lo;
                let mut count = 1usize;
                for t in (0..levels).rev() {
                    if up[t][i] < hi {
                        i = up[t][i];
                        count += 1 << t;
                    }
                }
                let exponent = (count as f64).log2() / j as f64;
                let cand = AssouadWitness1D {
                    center: x,
                    big,
                    small,
                    count,
                };
                let replace = match &best_w {
                    None => true,
                    Some(bw) => {
                        exponent > best + EXPONENT_TIE
                            || (exponent >= best - EXPONENT_TIE
                                && (cand.center, big.exponent(), small.exponent())
                                    < (bw.center, bw.big.exponent(), bw.small.exponent()))
                    }
                };
                if replace {
                    best = exponent;
                    best_w = Some(cand);
                }
            }
        }
    }
    AssouadEstimate1D {
        exponent: best,
        witness: best_w,
    }
}
