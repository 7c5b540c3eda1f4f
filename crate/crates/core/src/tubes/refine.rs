use super::pigeon::select_band;
use super::scale;
use crate::dyadic::{tube_index, Direction, GridPointSet, TubeFamily};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Good tubes and the set `K_G` with uniform rectangle mass `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonConcentration {
    pub good_tubes: TubeFamily,
    pub k_g: GridPointSet,
    /// Mean mass of the selected rectangles; all lie in `[2^-j, 2^(-j+1)]`.
    pub m: f64,
    pub j: i64,
    /// `Delta^q = 2^-rect_exp` is the long side of a rectangle.
    pub rect_exp: u32,
    /// `(tube index, index along the tube)` of each selected rectangle.
    pub rectangles: Vec<(i64, i64)>,
    /// `|T_G| / |T|`.
    pub tube_fraction: f64,
    /// `max nu(K_G cap T cap B(x, Delta^q)) / nu(T)` over good tubes.
    pub ball_ratio: f64,
    /// `(Delta^q)^(d - s(e) - 4 alpha / q)`.
    pub ball_benchmark: f64,
    pub ball_ratio_holds: bool,
}

/// Splits each tube of `tubes` into `Delta x Delta^q` rectangles and keeps
/// rectangles of one dyadic mass band.
///
/// Each tube first keeps its own heaviest band; the band shared by the most
/// retained mass across tubes then decides which tubes are good.
pub fn nonconcentration_refine(
    nu: &DiscreteMeasure,
    tubes: &TubeFamily,
    rect_exp: u32,
    d: f64,
    s_e: f64,
    alpha: f64,
) -> Result<NonConcentration> {
    let e = tubes.direction;
    let w = tubes.width.exponent();
    if rect_exp > w {
        return Err(Error::InvalidScale(format!(
            "rectangle side 2^-{rect_exp} is shorter than the tube width 2^-{w}"
        )));
    }
    let set = nu.support();
    // tube -> rectangle -> mass
    let mut rects: BTreeMap<i64, BTreeMap<i64, f64>> = BTreeMap::new();
    let mut tube_mass: BTreeMap<i64, f64> = BTreeMap::new();
    for (p, wt) in nu.atoms() {
        let c = set.coords(p);
        if c.0 * c.0 + c.1 * c.1 >= 1.0 {
            continue;
        }
        let t = tube_index(e.dot(c), w);
        if !tubes.contains_index(t) {
            continue;
        }
        *tube_mass.entry(t).or_insert(0.0) += wt;
        *rects
            .entry(t)
            .or_default()
            .entry(tube_index(e.dot_perp(c), rect_exp))
            .or_insert(0.0) += wt;
    }
    // Per-tube band, then the band with the most retained mass over tubes.
    let mut per_tube: BTreeMap<i64, (i64, f64, Vec<i64>)> = BTreeMap::new();
    for (&t, r) in &rects {
        let idx: Vec<i64> = r.keys().copied().collect();
        let masses: Vec<f64> = r.values().copied().collect();
        if let Some(b) = select_band(&masses, None) {
            per_tube.insert(t, (b.j, b.mass, b.members.iter().map(|&i| idx[i]).collect()));
        }
    }
    let mut by_band: BTreeMap<i64, f64> = BTreeMap::new();
    for (j, mass, _) in per_tube.values() {
        *by_band.entry(*j).or_insert(0.0) += mass;
    }
    let mut best: Option<(i64, f64)> = None;
    for (&j, &mass) in &by_band {
        if best.map_or(true, |b| mass > b.1) {
            best = Some((j, mass));
        }
    }
    let Some((j, _)) = best else {
        return Err(Error::degenerate("nonconcentration", "no rectangle carries mass"));
    };
    let mut rectangles = Vec::new();
    let mut good = Vec::new();
    let mut rect_mass_sum = 0.0;
    for (&t, (jt, _, members)) in &per_tube {
        if *jt != j {
            continue;
        }
        good.push(t);
        for &r in members {
            rectangles.push((t, r));
            rect_mass_sum += rects[&t][&r];
        }
    }
    let m = rect_mass_sum / rectangles.len() as f64;
    let k_g = set.filter(|p| {
        let c = set.coords(p);
        c.0 * c.0 + c.1 * c.1 < 1.0
            && rectangles
                .binary_search(&(tube_index(e.dot(c), w), tube_index(e.dot_perp(c), rect_exp)))
                .is_ok()
    });

    let ball_ratio = ball_ratio(nu, &k_g, &e, w, &good, rect_exp, &tube_mass);
    let q = rect_exp as f64 / w as f64;
    let ball_benchmark = if q > 0.0 {
        2f64.powf(-(rect_exp as f64) * (d - s_e - 4.0 * alpha / q))
    } else {
        1.0
    };
    Ok(NonConcentration {
        tube_fraction: good.len() as f64 / tubes.len().max(1) as f64,
        good_tubes: TubeFamily::new(e, scale(w), good),
        k_g,
        m,
        j,
        rect_exp,
        rectangles,
        ball_ratio,
        ball_benchmark,
        ball_ratio_holds: ball_ratio <= ball_benchmark,
    })
}

/// Sliding window of length `2 Delta^q` along each good tube; every ball of
/// radius `Delta^q` meets the tube inside one such window.
fn ball_ratio(
    nu: &DiscreteMeasure,
    k_g: &GridPointSet,
    e: &Direction,
    w: u32,
    good: &[i64],
    rect_exp: u32,
    tube_mass: &BTreeMap<i64, f64>,
) -> f64 {
    let len = 2.0 * 2f64.powi(-(rect_exp as i32));
    let mut along: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
    for &p in k_g.points() {
        let c = k_g.coords(p);
        along
            .entry(tube_index(e.dot(c), w))
            .or_default()
            .push((e.dot_perp(c), nu.weight_at(p)));
    }
    let mut worst: f64 = 0.0;
    for &t in good {
        let Some(pts) = along.get_mut(&t) else { continue };
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut lo, mut acc) = (0usize, 0.0);
        for hi in 0..pts.len() {
            acc += pts[hi].1;
            while pts[hi].0 - pts[lo].0 >= len {
                acc -= pts[lo].1;
                lo += 1;
            }
            worst = worst.max(acc / tube_mass[&t]);
        }
    }
    worst
}
