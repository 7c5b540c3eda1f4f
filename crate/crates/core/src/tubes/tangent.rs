use super::bad::{bad_set, detect_bad_ball, BadBallTest, BadSet};
use super::pigeon::{band_result, pigeonhole_masses, PigeonBand};
use super::{q_exponents, scale, tube_masses, validate_q, Growth};
use crate::dyadic::DyadicScale;
use crate::error::{Error, Result};
use crate::generators::DirectionSet;
use crate::measure::{blowup, compose_balls, Ball, DiscreteMeasure};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentParams {
    pub q: Vec<f64>,
    pub alpha: f64,
    pub tau: f64,
    pub growth: Growth,
    /// Exponent `C` of the initial pigeonholing, `nu(B_0) >= delta0^C`.
    pub pigeon_c: f64,
    /// Frostman exponent used to renormalize blow-ups.
    pub d: f64,
    pub max_seconds: Option<f64>,
}

impl TangentParams {
    pub fn new(q: Vec<f64>, d: f64) -> Self {
        Self {
            q,
            alpha: 0.1,
            tau: 0.01,
            growth: Growth::default(),
            pigeon_c: 1.0,
            d,
            max_seconds: None,
        }
    }
}

/// One blow-up of the induction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Index of the measure produced by this step.
    pub n: usize,
    pub q_i: f64,
    pub q_j: f64,
    /// Center of the chosen ball in the coordinates of the previous measure.
    pub ball_center: (f64, f64),
    pub ball_radius_exp: u32,
    pub s_n: f64,
    pub surviving_sigma_mass: f64,
    pub delta_exp: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentResult {
    /// The final blown-up measure.
    pub nu: DiscreteMeasure,
    pub delta: DyadicScale,
    pub directions: DirectionSet,
    pub s: f64,
    /// `s_n(e)` for each surviving direction, in the order of `directions`.
    pub s_of_e: Vec<f64>,
    /// The mass band at width `delta` behind each `s_n(e)`.
    pub bands: Vec<PigeonBand>,
    pub n: usize,
    pub trace: Vec<TraceStep>,
    pub s_sequence: Vec<f64>,
    /// Directions removed at the stopping step because they were still bad.
    pub discarded: DirectionSet,
    /// `nu(B_0)`.
    pub final_mass: f64,
    /// `Delta^(f(n) tau)`.
    pub final_floor: f64,
    pub final_mass_ok: bool,
    /// The ball of the original measure whose blow-up gives `nu`.
    pub ball: Ball,
}

struct Live {
    dir: usize,
    s: f64,
    band: PigeonBand,
}

/// Window `[a, a + width]` carrying the most weight; ties go to the smallest `a`.
/// Returns the midpoint and the members.
fn cluster(live: &[Live], weights: &[f64], width: f64) -> (f64, Vec<usize>) {
    let mut starts: Vec<f64> = live.iter().map(|l| l.s).collect();
    starts.sort_by(f64::total_cmp);
    starts.dedup();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &a in &starts {
        let w: f64 = live
            .iter()
            .filter(|l| l.s >= a && l.s <= a + width)
            .map(|l| weights[l.dir])
            .sum();
        if w > best.0 {
            best = (w, a);
        }
    }
    let a = best.1;
    let members = (0..live.len())
        .filter(|&i| live[i].s >= a && live[i].s <= a + width)
        .collect();
    (a + width / 2.0, members)
}

/// Distinct exponent pairs `k_i < k_j` with the first `(q_i, q_j)` producing each.
fn scale_pairs(q: &[f64], k: u32) -> Vec<((u32, u32), (f64, f64))> {
    let ks = q_exponents(q, k);
    let mut out: Vec<((u32, u32), (f64, f64))> = Vec::new();
    for i in 0..ks.len() {
        for j in i + 1..ks.len() {
            if ks[i] < ks[j] && !out.iter().any(|p| p.0 == (ks[i], ks[j])) {
                out.push(((ks[i], ks[j]), (q[i], q[j])));
            }
        }
    }
    out
}

fn keep_members(v: Vec<Live>, members: &[usize]) -> Vec<Live> {
    v.into_iter()
        .enumerate()
        .filter(|(i, _)| members.binary_search(i).is_ok())
        .map(|(_, l)| l)
        .collect()
}

/// Runs the good-tangent induction on `mu` over the directions of `sigma`,
/// starting at scale `delta0`.
pub fn tangent_search(
    mu: &DiscreteMeasure,
    sigma: &DirectionSet,
    params: &TangentParams,
    delta0: DyadicScale,
) -> Result<TangentResult> {
    validate_q(&params.q)?;
    if !(params.alpha > 0.0) || !(params.tau > 0.0) {
        return Err(Error::InvalidArgument("alpha and tau must be positive".into()));
    }
    let k0 = delta0.exponent();
    if k0 == 0 || k0 > mu.scale().exponent() {
        return Err(Error::InvalidScale(format!(
            "delta0 = 2^-{k0} must lie in [grid step, 1)"
        )));
    }
    if sigma.is_empty() {
        return Err(Error::degenerate("tangent", "empty direction set"));
    }
    let started = Instant::now();
    let width = params.alpha / 50.0;
    let weights = &sigma.weights;

    // Initial exponents s_0(e).
    let init: Vec<Result<PigeonBand>> = sigma
        .directions
        .par_iter()
        .map(|e| {
            let entries = tube_masses(mu, e, k0);
            let band = pigeonhole_masses(&entries, k0, params.pigeon_c)?;
            Ok(band_result(*e, &entries, band, k0, params.pigeon_c))
        })
        .collect();
    let mut live = Vec::with_capacity(init.len());
    for (dir, band) in init.into_iter().enumerate() {
        let band = band?;
        live.push(Live {
            dir,
            s: band.s,
            band,
        });
    }
    let (mut s, members) = cluster(&live, weights, width);
    let mut live = keep_members(live, &members);

    let mut nu = mu.clone();
    let mut k = k0;
    let mut ball = Ball::unit();
    let mut trace = Vec::new();
    let mut s_sequence = vec![s];
    let mut n = 0usize;
    let threshold_exp = |n: usize| -(k0 as f64) * params.growth.eval(n + 1) * params.tau;

    loop {
        if let Some(limit) = params.max_seconds {
            if started.elapsed().as_secs_f64() > limit {
                return Err(Error::Resource(format!(
                    "tangent search exceeded {limit} s after {n} steps"
                )));
            }
        }
        if n > 1000 {
            return Err(Error::Resource("tangent search did not terminate".into()));
        }
        let pairs = scale_pairs(&params.q, k);
        let test = BadBallTest {
            s_n: s,
            alpha: params.alpha,
            tau: params.tau,
            f_next: params.growth.eval(n + 1),
            d: params.d,
        };
        let threshold = 2f64.powf(threshold_exp(n));
        let index = nu.index();
        // bad[l][p] is the bad set of live direction l for pair p, when heavy enough.
        let bad: Vec<Vec<Option<BadSet>>> = live
            .par_iter()
            .map(|l| {
                let e = sigma.directions[l.dir];
                pairs
                    .iter()
                    .map(|&(pair, _)| {
                        let bs = bad_set(&nu, &index, &e, pair, &test);
                        (bs.mass >= threshold).then_some(bs)
                    })
                    .collect()
            })
            .collect();
        let live_mass: f64 = live.iter().map(|l| weights[l.dir]).sum();
        let bad_mass: f64 = live
            .iter()
            .zip(&bad)
            .filter(|(_, b)| b.iter().any(Option::is_some))
            .map(|(l, _)| weights[l.dir])
            .sum();

        if bad_mass < live_mass / 2.0 || pairs.is_empty() {
            let (keep, drop): (Vec<usize>, Vec<usize>) =
                (0..live.len()).partition(|&i| bad[i].iter().all(Option::is_none));
            let discarded = DirectionSet {
                directions: drop.iter().map(|&i| sigma.directions[live[i].dir]).collect(),
                weights: drop.iter().map(|&i| weights[live[i].dir]).collect(),
            };
            if keep.is_empty() {
                return Err(Error::Degenerate {
                    stage: "tangent".into(),
                    detail: "every surviving direction is bad".into(),
                    trace: serde_json::to_string(&trace).ok(),
                });
            }
            let final_mass = nu.mass_in_unit_ball();
            let floor_exp = -(k as f64) * params.growth.eval(n) * params.tau;
            let final_floor = 2f64.powf(floor_exp);
            return Ok(TangentResult {
                directions: DirectionSet {
                    directions: keep.iter().map(|&i| sigma.directions[live[i].dir]).collect(),
                    weights: keep.iter().map(|&i| weights[live[i].dir]).collect(),
                },
                s_of_e: keep.iter().map(|&i| live[i].s).collect(),
                bands: keep.iter().map(|&i| live[i].band.clone()).collect(),
                delta: scale(k),
                nu,
                s,
                n,
                trace,
                s_sequence,
                discarded,
                final_mass,
                final_floor,
                final_mass_ok: final_mass.log2() >= floor_exp - 1e-12,
                ball,
            });
        }

        // The scale pair bad for the most sigma-mass; ties to the first pair.
        let mut best_pair = (f64::NEG_INFINITY, 0usize);
        for p in 0..pairs.len() {
            let m: f64 = live
                .iter()
                .zip(&bad)
                .filter(|(_, b)| b[p].is_some())
                .map(|(l, _)| weights[l.dir])
                .sum();
            if m > best_pair.0 {
                best_pair = (m, p);
            }
        }
        let p = best_pair.1;
        let ((k_i, k_j), (q_i, q_j)) = pairs[p];

        // The cell lying in the bad sets of the most sigma-mass.
        let mut votes: std::collections::BTreeMap<(i64, i64), f64> = Default::default();
        for (l, b) in live.iter().zip(&bad) {
            if let Some(bs) = &b[p] {
                for &c in &bs.cells {
                    *votes.entry(c).or_insert(0.0) += weights[l.dir];
                }
            }
        }
        let mut cell = ((0, 0), f64::NEG_INFINITY);
        for (&c, &w) in &votes {
            if w > cell.1 {
                cell = (c, w);
            }
        }
        let (a, b) = cell.0;
        let step_ball = Ball::new((2 * a + 1, 2 * b + 1), k_i + 1, scale(k_i));

        let mut next = Vec::new();
        for (l, bl) in live.iter().zip(&bad) {
            let Some(bs) = &bl[p] else { continue };
            if bs.cells.binary_search(&cell.0).is_err() {
                continue;
            }
            let e = sigma.directions[l.dir];
            let cert = detect_bad_ball(&nu, &index, &step_ball, &e, k_j, &test)
                .expect("bad cell carries a certificate");
            let kp = k_j - k_i;
            let band = PigeonBand {
                j: cert.j,
                s: cert.s_next,
                tubes: cert.tubes,
                masses: cert.masses,
                mass: cert.mass,
                total: cert.total,
                meets_mass_guarantee: cert.mass
                    >= cert.total / (2.0 * (test.f_next * test.tau * kp as f64).ceil().max(1.0)),
            };
            next.push(Live {
                dir: l.dir,
                s: cert.s_next,
                band,
            });
        }

        let blown = blowup(&nu, &step_ball, params.d)?;
        let lim = 2i64 << blown.scale().exponent();
        nu = blown.restrict(|(x, y)| x.abs() < lim && y.abs() < lim);
        ball = compose_balls(&ball, &step_ball)?;
        k = k_j - k_i;
        n += 1;
        let (s_new, members) = cluster(&next, weights, width);
        live = keep_members(next, &members);
        s = s_new;
        s_sequence.push(s);
        trace.push(TraceStep {
            n,
            q_i,
            q_j,
            ball_center: step_ball.center_f64(),
            ball_radius_exp: k_i,
            s_n: s,
            surviving_sigma_mass: live.iter().map(|l| weights[l.dir]).sum(),
            delta_exp: k,
        });
        if live.is_empty() {
            return Err(Error::Degenerate {
                stage: "tangent".into(),
                detail: format!("no direction survived step {n}"),
                trace: serde_json::to_string(&trace).ok(),
            });
        }
    }
}
