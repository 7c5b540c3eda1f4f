//! Acceptance run. Every criterion prints one PASS/FAIL line; the process
//! exits non-zero when any criterion fails.

use assouad_core::dyadic::{
    assouad_exponent, assouad_exponent_1d, dyadic_tube_cover, tube_index, Direction,
    DyadicScale, DyadicSet1D, GridPointSet,
};
use assouad_core::generators::{
    cantor_1d, ifs_attractor, product_set, staircase, DirectionSet, IfsSystem,
};
use assouad_core::measure::{
    blowup, chain_rule_check, frostman_defect, quasiregularity_constant, thin_ball_set, Ball,
    DiscreteMeasure,
};
use assouad_core::pipeline::{projection_exponents, run_pipeline, PipelineConfig, PipelineReport, SweepScales};
use assouad_core::smoothing::{
    branching_profile, convolve, mollify, norm_ratio, BranchingClass, DeltaMeasure1D,
    NORM_RATIO_BOUNDS,
};
use assouad_core::tubes::{default_q, pigeonhole_tubes, tangent_search, TangentParams, TangentResult};
use assouad_core::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_assouad-lab");

fn s(k: u32) -> DyadicScale {
    DyadicScale::new(k).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

#[derive(Default)]
struct Runner {
    failed: Vec<u32>,
}

impl Runner {
    fn run<T>(&mut self, n: u32, name: &str, limit: Option<f64>, f: impl FnOnce() -> (Outcome, T)) -> T {
        let start = Instant::now();
        let (o, value) = f();
        let secs = start.elapsed().as_secs_f64();
        let in_time = limit.map_or(true, |l| secs <= l);
        let pass = o.pass && in_time;
        let budget = limit.map(|l| format!(" of {l}s")).unwrap_or_default();
        let late = if in_time { "" } else { ", over time" };
        println!(
            "criterion {n:>2} {} {name}: {} [{secs:.1}s{budget}{late}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !pass {
            self.failed.push(n);
        }
        value
    }
}

/// Random weights on random points of the grid `2^-exp` inside `[-1, 1)^2`.
fn random_measure(rng: &mut ChaCha8Rng, exp: u32, count: usize) -> DiscreteMeasure {
    let side = 1i64 << exp;
    let atoms = (0..count)
        .map(|_| {
            let p = (rng.gen_range(-side..side), rng.gen_range(-side..side));
            (p, rng.gen_range(0.05..1.0))
        })
        .collect();
    DiscreteMeasure::new(s(exp), atoms).unwrap().normalized().unwrap()
}

fn random_center(rng: &mut ChaCha8Rng, exp: u32) -> (i64, i64) {
    let side = 1i64 << exp;
    (rng.gen_range(-side..side), rng.gen_range(-side..side))
}

fn attractor(seed: u64, base: u32, count: usize, exp: u32) -> (DiscreteMeasure, f64) {
    let sys = IfsSystem::random_grid(seed, base, count).unwrap();
    let a = ifs_attractor(&sys, s(exp), 1 << 22).unwrap();
    (a.measure, (count as f64).ln() / (base as f64).ln())
}

fn chain_rule() -> (Outcome, ()) {
    let mut r = rng(101);
    let cases = 100;
    let (mut agree, mut geometry, mut worst) = (0, 0, 0.0f64);
    for _ in 0..cases {
        let e = r.gen_range(6..=10u32);
        let count = r.gen_range(20..400);
        let mu = random_measure(&mut r, e, count);
        let d = r.gen_range(0.2..2.0);
        let k1 = r.gen_range(1..=e / 2);
        let ce1 = r.gen_range(0..=e);
        let outer = Ball::new(random_center(&mut r, ce1), ce1, s(k1));
        let k2 = r.gen_range(1..=e - k1);
        let ce2 = r.gen_range(0..=e - k1);
        let inner = Ball::new(random_center(&mut r, ce2), ce2, s(k2));
        let rep = chain_rule_check(&mu, &outer, &inner, d).unwrap();
        if rep.agrees && rep.max_relative_error <= 1e-9 {
            agree += 1;
        }
        worst = worst.max(rep.max_relative_error);
        // The composite ball is B(c + r c', r r'); all values are exact dyadics.
        let (cx, cy) = outer.center_f64();
        let (ix, iy) = inner.center_f64();
        let rad = outer.radius_f64();
        if rep.composite.center_f64() == (cx + rad * ix, cy + rad * iy)
            && rep.composite.radius_f64() == rad * inner.radius_f64()
        {
            geometry += 1;
        }
    }
    let pass = agree == cases && geometry == cases;
    (
        outcome(
            pass,
            format!("{agree}/{cases} agree at 1e-9 (worst {worst:.1e}), {geometry}/{cases} composite balls exact"),
        ),
        (),
    )
}

fn blowup_quasiregularity() -> (Outcome, ()) {
    let mut r = rng(202);
    let e = 8;
    let (mut checks, mut mismatched, mut worst) = (0, 0, 0.0f64);
    let mut same_constant = true;
    for i in 0..20u64 {
        let count = r.gen_range(3..=8);
        let (mu, d) = attractor(2000 + i, 4, count, e);
        let before: Vec<f64> = (0..=e).map(|k| frostman_defect(&mu, d, &[s(k)]).ratio).collect();
        let constant = before.iter().copied().fold(0.0, f64::max);
        for _ in 0..3 {
            let p = mu.support().points()[r.gen_range(0..mu.len())];
            let k = r.gen_range(1..=3);
            let nu = blowup(&mu, &Ball::new(p, e, s(k)), d).unwrap();
            let mut after_max: f64 = 0.0;
            for j in 0..=(e - k) {
                let after = frostman_defect(&nu, d, &[s(j)]).ratio;
                let b = before[(j + k) as usize];
                checks += 1;
                let rel = (after - b).abs() / b.max(after);
                worst = worst.max(rel);
                if after > b * (1.0 + 1e-12) || b > after * (1.0 + 1e-12) {
                    mismatched += 1;
                }
                after_max = after_max.max(after);
            }
            if after_max > constant * (1.0 + 1e-12) {
                same_constant = false;
            }
        }
    }
    (
        outcome(
            mismatched == 0 && same_constant,
            format!(
                "{} of {checks} shared scales agree (worst relative gap {worst:.1e}); blow-ups keep the constant: {same_constant}",
                checks - mismatched
            ),
        ),
        (),
    )
}

fn pigeonhole_contract() -> (Outcome, ()) {
    let mut r = rng(303);
    let instances = 200;
    let (mut ok, mut rejected, mut guarantee_misses, mut floor_misses) = (0, 0, 0, 0);
    let mut failures = Vec::new();
    for i in 0..instances {
        let e = r.gen_range(5..=8u32);
        let count = r.gen_range(20..600);
        let nu = random_measure(&mut r, e, count);
        let dir = Direction::new(r.gen_range(0.0..PI));
        let w = r.gen_range(1..=e);
        let c = [0.5, 1.0, 2.0][r.gen_range(0..3)];
        let cover = dyadic_tube_cover(nu.support(), &dir, s(w));
        let keep_p = r.gen_range(0.3..=1.0);
        let mut kept: Vec<i64> = cover.indices.iter().copied().filter(|_| r.gen_bool(keep_p)).collect();
        if kept.is_empty() {
            kept.push(cover.indices[0]);
        }
        let family = assouad_core::dyadic::TubeFamily::new(dir, s(w), kept);

        // Tube masses from the atoms directly.
        let (cth, sth) = (dir.angle().cos(), dir.angle().sin());
        let scale = 2f64.powi(w as i32);
        let mut masses: BTreeMap<i64, f64> = BTreeMap::new();
        for ((x, y), m) in nu.atoms() {
            let (px, py) = nu.support().coords((x, y));
            if px * px + py * py >= 1.0 {
                continue;
            }
            let t = ((px * cth + py * sth + 1e-12) * scale).floor() as i64;
            if family.contains_index(t) {
                *masses.entry(t).or_insert(0.0) += m;
            }
        }
        let total: f64 = masses.values().sum();
        let result = pigeonhole_tubes(&nu, &family, c);
        if total.log2() < -c * w as f64 - 1e-9 {
            match result {
                Err(Error::Precondition(_)) => {
                    rejected += 1;
                    ok += 1;
                }
                _ => failures.push(format!("#{i}: light family accepted")),
            }
            continue;
        }
        let band = match result {
            Ok(b) => b,
            Err(err) => {
                failures.push(format!("#{i}: {err}"));
                continue;
            }
        };
        // Every band j >= 0 down to the floor delta^(C+1)/16, ties to the smallest j.
        let j_max = ((c + 1.0) * w as f64 + 4.0 + 1e-9).floor() as i64;
        let in_band = |m: f64, j: i64| 2f64.powi(-j as i32) <= m && m <= 2f64.powi(1 - j as i32);
        let mut best = (0i64, f64::NEG_INFINITY);
        for j in 0..=j_max {
            let m: f64 = masses.values().filter(|&&m| in_band(m, j)).sum();
            if m > best.1 + 1e-15 {
                best = (j, m);
            }
        }
        let members: Vec<i64> = masses.iter().filter(|(_, &m)| in_band(m, best.0)).map(|(&t, _)| t).collect();
        let condition = band.masses.iter().all(|&m| in_band(m, band.j)) && band.band_condition_holds();
        let maximal = band.j == best.0 && (band.mass - best.1).abs() <= 1e-12 && band.tubes.indices == members;
        let guarantee = band.mass >= total / (2.0 * (c * w as f64).ceil().max(1.0)) * (1.0 - 1e-12);
        if !guarantee {
            guarantee_misses += 1;
        }
        // What the band floor alone guarantees: half the mass spread over j = 0..=j_max.
        if band.mass < total / (2.0 * (j_max + 1) as f64) * (1.0 - 1e-12) {
            floor_misses += 1;
        }
        if condition && maximal && guarantee {
            ok += 1;
        } else {
            failures.push(format!(
                "#{i}: condition {condition}, maximal {maximal}, fraction {guarantee} (C {c}, width 2^-{w}, band mass {:.4} of {total:.4})",
                band.mass
            ));
        }
    }
    failures.truncate(3);
    (
        outcome(
            ok == instances,
            format!(
                "{ok}/{instances} instances match the brute-force band ({rejected} light families rejected, {guarantee_misses} below total/(2 ceil(C log2(1/delta))), {floor_misses} below total/(2 (j_max + 1))){}",
                if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
            ),
        ),
        (),
    )
}

fn thin_ball_lemma() -> (Outcome, ()) {
    let mut r = rng(404);
    let e = 10;
    let instances = 50;
    let (mut ok, mut nonempty, mut set_mismatch) = (0, 0, 0);
    let mut tightest: f64 = 0.0;
    for i in 0..instances {
        let count = r.gen_range(3..=5);
        let (mu, d) = attractor(4000 + i, 4, count, e);
        let p_keep = r.gen_range(0.05..=1.0);
        let e_set = mu.support().filter(|_| r.gen_bool(p_keep));
        let a = r.gen_range(1..=4u32);
        let b = r.gen_range(a..=e);
        let rr = s(b).value();
        let eps = r.gen_range(0.1..1.0);
        let thin = thin_ball_set(&mu, &e_set, rr, eps, s(a), d);

        // Membership by direct summation over E, distances in grid units.
        let rad = 1i64 << (e - a);
        let threshold = rr.powf(eps) * s(a).value().powf(d);
        let direct = e_set.filter(|x| {
            let m: f64 = e_set
                .points()
                .iter()
                .filter(|y| {
                    let (dx, dy) = (x.0 - y.0, x.1 - y.1);
                    dx * dx + dy * dy < rad * rad
                })
                .map(|&y| mu.weight_at(y))
                .sum();
            m <= threshold
        });
        if direct != thin {
            set_mismatch += 1;
        }
        let lhs = mu.mass_of(&thin);
        let c = quasiregularity_constant(mu.support(), d, eps / 2.0, &[(s(0), s(a))]).unwrap().constant;
        let rhs = 100.0 * c * rr.powf(eps / 2.0);
        if !thin.is_empty() {
            nonempty += 1;
        }
        tightest = tightest.max(lhs / rhs);
        if lhs <= rhs && direct == thin {
            ok += 1;
        }
    }
    (
        outcome(
            ok == instances,
            format!(
                "{ok}/{instances} within 100 C r^(eps/2) ({nonempty} non-empty, largest ratio {tightest:.3}, {set_mismatch} membership mismatches)"
            ),
        ),
        (),
    )
}

/// Maximal number of `r`-children per `R`-cell, by hashing.
fn brute_exponent_2d(set: &GridPointSet, radii: &[u32], ratios: &[u32]) -> f64 {
    let e = set.scale().exponent();
    let mut best: f64 = 0.0;
    for &a in radii {
        for &j in ratios {
            if a + j > e {
                continue;
            }
            let mut children: HashMap<(i64, i64), HashSet<(i64, i64)>> = HashMap::new();
            for &(x, y) in set.points() {
                let parent = (x >> (e - a), y >> (e - a));
                children.entry(parent).or_default().insert((x >> (e - a - j), y >> (e - a - j)));
            }
            for c in children.values() {
                best = best.max((c.len() as f64).log2() / j as f64);
            }
        }
    }
    best
}

/// Greedy interval cover of the points in `(x - R, x + R)` for every point `x`.
fn brute_exponent_1d(values: &[f64], radii: &[u32], ratios: &[u32], min_scale: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut best: f64 = 0.0;
    for &a in radii {
        let big = s(a).value();
        for &j in ratios {
            let r = s(a + j).value();
            if r < min_scale {
                continue;
            }
            for &x in &v {
                let inside: Vec<f64> = v.iter().copied().filter(|&y| y > x - big && y < x + big).collect();
                let mut count = 0;
                let mut i = 0;
                while i < inside.len() {
                    count += 1;
                    let start = inside[i];
                    while i < inside.len() && inside[i] - start < 2.0 * r {
                        i += 1;
                    }
                }
                best = best.max((count as f64).log2() / j as f64);
            }
        }
    }
    best
}

fn estimator_calibration() -> (Outcome, ()) {
    // Ratios are powers of 4 so the cells align with the base-4 Cantor construction.
    let radii = [1u32, 2, 3];
    let ratios = [2u32, 4, 6, 8];
    let scales: Vec<DyadicScale> = radii.iter().map(|&a| s(a)).collect();

    let grid = GridPointSet::full_grid(s(8), -1.0, 1.0);
    let g = assouad_exponent(&grid, &scales, &ratios).unwrap().exponent;
    let g_oracle = brute_exponent_2d(&grid, &radii, &ratios);

    let c = cantor_1d(4, &[0, 3], 6, 0.0).unwrap();
    let line = DyadicSet1D::new(s(12), c.positions());
    let prod = product_set(&line, &line).unwrap();
    let p = assouad_exponent(&prod, &scales, &ratios).unwrap().exponent;
    let p_oracle = brute_exponent_2d(&prod, &radii, &ratios);

    let vals = line.values();
    let min = s(12).value();
    let one = assouad_exponent_1d(&vals, &scales, &ratios, min).exponent;
    let one_oracle = brute_exponent_1d(&vals, &radii, &ratios, min);

    let pass = (g - 2.0).abs() <= 0.05
        && (p - 1.0).abs() <= 0.1
        && (one - 0.5).abs() <= 0.05
        && (g - g_oracle).abs() < 1e-12
        && (p - p_oracle).abs() < 1e-12
        && (one - one_oracle).abs() < 1e-12;
    (
        outcome(
            pass,
            format!(
                "full grid {g:.4} (oracle {g_oracle:.4}), C1/4 x C1/4 {p:.4} (oracle {p_oracle:.4}), C1/4 {one:.4} (oracle {one_oracle:.4})"
            ),
        ),
        (),
    )
}

fn four_corner(k: u32) -> DiscreteMeasure {
    ifs_attractor(&IfsSystem::four_corner_centered(), s(k), 1 << 24).unwrap().measure
}

fn projection_sweep() -> (Outcome, ()) {
    let n = 180;
    let mu = four_corner(12);
    let sigma = DirectionSet::uniform(n);
    let ex = projection_exponents(mu.support(), &sigma.directions, &SweepScales::for_grid(12)).unwrap();
    let good = ex.iter().filter(|x| x.exponent >= 0.85).count();
    let frac = good as f64 / n as f64;
    let cell = PI / n as f64;
    let far: Vec<String> = ex
        .iter()
        .filter(|x| x.exponent < 0.85)
        .filter(|x| {
            let c = (x.angle / cell).round() as i64;
            let to_axis = [0, 90, 180].iter().map(|a| (c - a).abs()).min().unwrap();
            to_axis > 2
        })
        .map(|x| format!("{:.0}deg ({:.3})", x.angle.to_degrees(), x.exponent))
        .collect();
    let pass = frac >= 0.9 && far.is_empty();
    (
        outcome(
            pass,
            format!(
                "{good}/{n} directions at >= 0.85 ({:.1}%); exceptional beyond 2 cells of the axes: {}",
                100.0 * frac,
                if far.is_empty() { "none".to_string() } else { far.join(", ") }
            ),
        ),
        (),
    )
}

struct TangentCase {
    mu: DiscreteMeasure,
    sigma: DirectionSet,
    d: f64,
}

fn tangent_cases() -> Vec<TangentCase> {
    let mut r = rng(707);
    (0..50u64)
        .map(|i| {
            let sigma = DirectionSet::uniform(r.gen_range(1..=8));
            let (mu, d) = match i % 3 {
                0 => (staircase(s(8), r.gen_range(2..=5)).unwrap(), 1.0),
                1 => attractor(7000 + i, 4, r.gen_range(2..=10), 8),
                _ => attractor(7000 + i, 2, r.gen_range(2..=4), 8),
            };
            TangentCase { mu, sigma, d }
        })
        .collect()
}

fn tangent_termination(cases: &[TangentCase]) -> (Outcome, ()) {
    let mut ok = 0;
    let mut degenerate = Vec::new();
    let mut failures = Vec::new();
    let mut steps = BTreeMap::new();
    for (i, c) in cases.iter().enumerate() {
        let mut p = TangentParams::new(default_q(3).unwrap(), c.d);
        p.alpha = 0.1;
        match tangent_search(&c.mu, &c.sigma, &p, s(8)) {
            Ok(t) => {
                *steps.entry(t.n).or_insert(0) += 1;
                match check_tangent(&t, &p) {
                    Ok(()) => ok += 1,
                    Err(why) => failures.push(format!("#{i}: {why}")),
                }
            }
            Err(e @ Error::Degenerate { .. }) => degenerate.push(format!("#{i}: {e}")),
            Err(e) => failures.push(format!("#{i}: {e}")),
        }
    }
    let total = cases.len();
    let pass = ok == total;
    let mut notes: Vec<String> = failures.into_iter().chain(degenerate).collect();
    notes.truncate(3);
    (
        outcome(
            pass,
            format!(
                "{ok}/{total} searches meet the step bound, the alpha/2 drops and the mass floor; steps {steps:?}{}",
                if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }
            ),
        ),
        (),
    )
}

fn check_tangent(t: &TangentResult, p: &TangentParams) -> Result<(), String> {
    let s0 = t.s_sequence[0];
    let bound = (2.0 * s0 / p.alpha).ceil() as usize + 1;
    if t.n > bound {
        return Err(format!("{} steps exceed {bound}", t.n));
    }
    if t.trace.len() != t.n || t.s_sequence.len() != t.n + 1 {
        return Err("trace length differs from the step count".into());
    }
    for w in t.s_sequence.windows(2) {
        if !(w[1] <= w[0] - p.alpha / 2.0) {
            return Err(format!("s drops from {} to {}", w[0], w[1]));
        }
    }
    // nu(B_0) >= Delta^(f(n) tau) with f(n) = 10 4^n.
    let k = t.delta.exponent() as f64;
    let floor_exp = -k * 10.0 * 4f64.powi(t.n as i32) * p.tau;
    let mass = t.nu.mass_in_unit_ball();
    if mass.log2() < floor_exp - 1e-12 {
        return Err(format!("final mass {mass:e} below 2^{floor_exp}"));
    }
    Ok(())
}

fn pipeline_runs(cases: &[TangentCase]) -> (Vec<(String, PipelineReport)>, Vec<String>) {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    let mut cfg = PipelineConfig::new(3, 12, 1.0, 0.5);
    cfg.heavy_c_tau = 0.4;
    match run_pipeline(&four_corner(12), &DirectionSet::uniform(180), &cfg) {
        Ok(r) => runs.push(("four-corner".to_string(), r)),
        Err(e) => skipped.push(format!("four-corner: {e}")),
    }
    for (i, c) in cases.iter().enumerate() {
        let mut cfg = PipelineConfig::new(3, 8, c.d, 0.5 * c.d.min(1.0));
        cfg.heavy_c_tau = 0.4;
        match run_pipeline(&c.mu, &c.sigma, &cfg) {
            Ok(r) => runs.push((format!("#{i}"), r)),
            Err(e) => skipped.push(format!("#{i}: {e}")),
        }
    }
    (runs, skipped)
}

fn chain_identities(runs: &[(String, PipelineReport)], skipped: &[String]) -> (Outcome, ()) {
    let mut chains = 0;
    let mut failures = Vec::new();
    for (name, r) in runs {
        for st in &r.stages {
            chains += 1;
            let levels = &st.chain.chain.levels;
            let sizes: Vec<u128> = levels.iter().map(|l| l.tubes.len() as u128).collect();
            let num: u128 = sizes[..sizes.len() - 1].iter().product();
            let den: u128 = sizes[1..].iter().product();
            let telescopes = num * sizes[sizes.len() - 1] == den * sizes[0];
            let nested = levels.windows(2).all(|w| {
                let shift = w[0].width_exp - w[1].width_exp;
                w[0].tubes.indices.iter().all(|&t| w[1].tubes.contains_index(t >> shift))
            });
            let k_e = &st.chain.k_e;
            let covered = levels.iter().all(|l| {
                k_e.points()
                    .iter()
                    .all(|&p| l.tubes.contains_index(tube_index(st.direction.dot(k_e.coords(p)), l.width_exp)))
            });
            let flags = st.chain.chain.telescoping_holds && st.chain.nesting_holds && st.chain.contained_holds;
            if !(telescopes && nested && covered && flags) {
                failures.push(format!(
                    "{name} at {:.3}: telescoping {telescopes}, nesting {nested}, K_e covered {covered}",
                    st.direction.angle()
                ));
            }
        }
    }
    failures.truncate(3);
    (
        outcome(
            failures.is_empty() && !runs.is_empty(),
            format!(
                "{chains} refined chains over {} pipeline runs; stopped early: {}{}",
                runs.len(),
                if skipped.is_empty() { "none".to_string() } else { skipped.join("; ") },
                if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
            ),
        ),
        (),
    )
}

fn row_sums(runs: &[(String, PipelineReport)]) -> (Outcome, ()) {
    let mut rows = 0;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (name, r) in runs {
        let nu = &r.tangent.nu;
        let qp = &r.quasi;
        let k_e = &r.stages[r.companion].chain.k_e;
        let k_e1 = &r.stages[r.reference].chain.k_e;
        let e1 = qp.direction;
        let a_p = qp.grids.side_exp;
        let exp = nu.scale().exponent();
        let rad = 1i64 << (exp - a_p);
        let norm = 2f64.powf(a_p as f64 * qp.t_th);
        for (row, sq) in r.tube.squares.iter().enumerate() {
            rows += 1;
            let anchor = sq.anchor;
            let direct: f64 = nu
                .atoms()
                .filter(|&(p, _)| {
                    let c = nu.support().coords(p);
                    let (dx, dy) = (p.0 - anchor.0, p.1 - anchor.1);
                    dx * dx + dy * dy < rad * rad
                        && c.0 * c.0 + c.1 * c.1 < 1.0
                        && k_e.contains(p)
                        && k_e1.contains(p)
                        && (tube_index(e1.dot(c), a_p), tube_index(e1.dot_perp(c), a_p)) == sq.cell
                })
                .map(|(_, w)| w)
                .sum::<f64>()
                * norm;
            let sum: f64 = qp.weights[row].iter().sum();
            let rel = if direct == 0.0 { sum.abs() } else { (sum - direct).abs() / direct };
            worst = worst.max(rel);
            if rel > 1e-9 {
                failures.push(format!("{name} row {row}: {sum} vs {direct}"));
            }
        }
        let good = qp.good.as_ref().unwrap();
        for rb in &good.rows {
            let w = &qp.weights[rb.row];
            let row_mass: f64 = w.iter().sum();
            let pos: Vec<f64> = w.iter().copied().filter(|&x| x > 0.0).collect();
            let (lo, hi) = pos.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            let bands = (hi / lo).log2().ceil().max(1.0);
            let retained: f64 = rb.members.iter().map(|&c| w[c]).sum();
            if retained < row_mass / (2.0 * bands) * (1.0 - 1e-12) {
                failures.push(format!("{name} row {}: retained {retained} of {row_mass}", rb.row));
            }
        }
    }
    failures.truncate(3);
    (
        outcome(
            failures.is_empty() && rows > 0,
            format!(
                "{rows} rows over {} runs, worst relative row-sum error {worst:.1e}, every row keeps its pigeonhole share{}",
                runs.len(),
                if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
            ),
        ),
        (),
    )
}

fn norm_machinery() -> (Outcome, ()) {
    let mut r = rng(1010);
    let k = 10;
    let top = 1i64 << k;
    let measures = 100;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let (mut ok, mut oracle_gap, mut mass_gap) = (0, 0.0f64, 0.0f64);
    for i in 0..measures {
        let mut atoms: Vec<(i64, f64)> = Vec::new();
        if i % 2 == 0 {
            for _ in 0..r.gen_range(1..300) {
                atoms.push((r.gen_range(0..top), r.gen_range(0.01..1.0)));
            }
        } else {
            // A few runs of consecutive atoms.
            for _ in 0..r.gen_range(1..6) {
                let start = r.gen_range(0..top - 200);
                for p in start..start + r.gen_range(1..200) {
                    atoms.push((p, r.gen_range(0.5..1.0)));
                }
            }
        }
        let mu = DeltaMeasure1D::normalized(s(k), atoms).unwrap();
        let ratio = norm_ratio(&mu);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        // ratio = 2 / (1 + rho), rho = sum w_a w_(a+Delta) / sum w_a^2.
        let w: BTreeMap<i64, f64> = mu.atoms().iter().copied().collect();
        let sq: f64 = w.values().map(|x| x * x).sum();
        let adj: f64 = w.iter().map(|(p, x)| x * w.get(&(p + 1)).copied().unwrap_or(0.0)).sum();
        let oracle = 2.0 / (1.0 + adj / sq);
        oracle_gap = oracle_gap.max((ratio - oracle).abs() / oracle);

        let mut mass_ok = true;
        for rho in [s(k).value(), 4.0 * s(k).value(), 0.125] {
            let m = mollify(&mu, rho).unwrap();
            let gap = (m.l1 - mu.mass()).abs();
            mass_gap = mass_gap.max(gap);
            mass_ok &= gap <= 1e-9;
        }
        let id = convolve(&mu, &DeltaMeasure1D::point_mass(s(k), 0)).unwrap();
        let in_range = (0.125..=8.0).contains(&ratio)
            && ratio >= NORM_RATIO_BOUNDS.0 - 1e-12
            && ratio <= NORM_RATIO_BOUNDS.1 + 1e-12;
        if in_range && mass_ok && id == mu && (ratio - oracle).abs() <= 1e-9 * oracle {
            ok += 1;
        }
    }
    (
        outcome(
            ok == measures,
            format!(
                "{ok}/{measures} measures: ratio in [{lo:.4}, {hi:.4}] (certified [{}, {}]), oracle gap {oracle_gap:.1e}, mollified mass gap {mass_gap:.1e}, delta_0 convolution exact",
                NORM_RATIO_BOUNDS.0, NORM_RATIO_BOUNDS.1
            ),
        ),
        (),
    )
}

/// Every `2^(-ms)`-interval meeting `set` has exactly `r[s]` children meeting it.
fn constant_branching(set: &[i64], exp: u32, m: u32, r: &[u64]) -> bool {
    (0..exp / m).all(|lvl| {
        let parent = exp - m * lvl;
        let child = exp - m * (lvl + 1);
        let mut per: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
        for &p in set {
            per.entry(p >> parent).or_default().insert(p >> child);
        }
        per.values().all(|c| c.len() as u64 == r[lvl as usize])
    })
}

fn expected_class(r: u64, m: u32, beta: f64) -> BranchingClass {
    if r as f64 >= 2f64.powf((1.0 - beta) * m as f64) {
        BranchingClass::Uniform
    } else if r == 1 {
        BranchingClass::Singular
    } else {
        BranchingClass::Mixed
    }
}

fn branching_profiles() -> (Outcome, ()) {
    let mut r = rng(1111);
    let beta = 0.2;
    let (mut total, mut ok) = (0, 0);
    for m in [2u32, 4] {
        for l in [3u32, 4] {
            let exp = m * l;
            for _ in 0..10 {
                total += 1;
                // A random tree with level-dependent branching plus stray atoms.
                let mut nodes = vec![0i64];
                for _ in 0..l {
                    let mut next = Vec::new();
                    for &n in &nodes {
                        let mut digits: Vec<i64> = (0..1i64 << m).collect();
                        digits.shuffle(&mut r);
                        for &dg in &digits[..r.gen_range(1..=1usize << m)] {
                            next.push((n << m) | dg);
                        }
                    }
                    nodes = next;
                }
                for _ in 0..r.gen_range(0..20) {
                    nodes.push(r.gen_range(0..1i64 << exp));
                }
                let atoms = nodes.iter().map(|&p| (p, r.gen_range(0.1..1.0))).collect();
                let mu = DeltaMeasure1D::normalized(s(exp), atoms).unwrap();
                let p = branching_profile(&mu, m, beta, None).unwrap();
                let support: BTreeSet<i64> = mu.positions().into_iter().collect();
                let sub = &p.regular_subset;
                let retained: f64 = mu.atoms().iter().filter(|a| sub.contains(&a.0)).map(|a| a.1).sum();
                let classes_ok = p.classes.iter().zip(&p.r).all(|(c, &rs)| *c == expected_class(rs, m, beta));
                if !sub.is_empty()
                    && sub.iter().all(|x| support.contains(x))
                    && p.r.len() == l as usize
                    && constant_branching(sub, exp, m, &p.r)
                    && (retained - p.retained_mass).abs() <= 1e-12
                    && classes_ok
                {
                    ok += 1;
                }
            }
        }
    }

    let counting = |exp: u32, pts: &[i64]| DeltaMeasure1D::counting(s(exp), pts).unwrap();
    let full: Vec<i64> = (0..256).collect();
    let uniform = branching_profile(&counting(8, &full), 4, beta, None).unwrap();
    let single = branching_profile(&counting(12, &[37]), 4, beta, None).unwrap();
    let mut blocks = Vec::new();
    for a in 0..16i64 {
        for c in 0..16i64 {
            blocks.push((a << 8) | (5 << 4) | c);
        }
    }
    let mixed = branching_profile(&counting(12, &blocks), 4, beta, None).unwrap();
    use BranchingClass::{Singular, Uniform};
    let examples = [
        uniform.r == vec![16, 16] && uniform.classes == vec![Uniform, Uniform],
        single.r == vec![1, 1, 1] && single.classes == vec![Singular, Singular, Singular],
        mixed.r == vec![16, 1, 16] && mixed.classes == vec![Uniform, Singular, Uniform],
    ];
    let examples_ok = examples.iter().filter(|&&x| x).count();
    (
        outcome(
            ok == total && examples_ok == 3,
            format!("{ok}/{total} extracted subsets branch constantly; {examples_ok}/3 classification examples correct"),
        ),
        (),
    )
}

fn lab(cmd: &str, cfg: &Path, out: &Path) -> i32 {
    Command::new(BIN)
        .args([cmd, "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(["--seed", "11"])
        .output()
        .unwrap()
        .status
        .code()
        .unwrap_or(-1)
}

fn files_in(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .map(|it| {
            it.map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect()
        })
        .unwrap_or_default()
}

fn determinism() -> (Outcome, ()) {
    let tmp = tempfile::tempdir().unwrap();
    let configs_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let ifs = tmp.path().join("random_ifs.toml");
    std::fs::write(
        &ifs,
        "delta0_exp = 8\nd = 1.0\nD = 0.5\nN = 3\neps0 = 0.3\n[pipeline]\nheavy_c_tau = 0.6\n\
         [subject]\nkind = \"random-ifs\"\nbase = 4\ncount = 5\ngrid_exp = 8\n\
         [directions]\nkind = \"frostman\"\ndelta_exp = 5\n",
    )
    .unwrap();
    let configs = [
        configs_dir.join("staircase.toml"),
        configs_dir.join("horizontal_segment.toml"),
        configs_dir.join("full_grid.toml"),
        ifs,
    ];
    let commands = ["generate", "dims", "tangent", "quasiprod", "inverse-probe", "audit", "verify"];
    let (mut runs, mut identical) = (0, 0);
    let mut diffs = Vec::new();
    for cfg in &configs {
        let stem = cfg.file_stem().unwrap().to_string_lossy().into_owned();
        for cmd in commands {
            runs += 1;
            let out = tmp.path().join(format!("{stem}-{cmd}"));
            let first = tmp.path().join(format!("{stem}-{cmd}-first"));
            let c1 = lab(cmd, cfg, &out);
            let a = files_in(&out);
            std::fs::rename(&out, &first).ok();
            let c2 = lab(cmd, cfg, &out);
            let b = files_in(&out);
            if c1 == c2 && a == b && !a.is_empty() {
                identical += 1;
            } else {
                diffs.push(format!("{stem}/{cmd} (exit {c1} vs {c2})"));
            }
        }
    }
    diffs.truncate(3);
    (
        outcome(
            identical == runs,
            format!(
                "{identical}/{runs} command runs byte-identical across reruns{}",
                if diffs.is_empty() { String::new() } else { format!("; differing: {}", diffs.join(", ")) }
            ),
        ),
        (),
    )
}

fn main() {
    let mut run = Runner::default();
    run.run(1, "chain rule", Some(5.0), chain_rule);
    run.run(2, "blow-up quasiregularity", Some(30.0), blowup_quasiregularity);
    run.run(3, "pigeonhole contract", Some(30.0), pigeonhole_contract);
    run.run(4, "thin-ball bound", Some(60.0), thin_ball_lemma);
    run.run(5, "Assouad estimator calibration", Some(120.0), estimator_calibration);
    run.run(6, "projection sweep", Some(600.0), projection_sweep);
    let cases = tangent_cases();
    run.run(7, "tangent search termination", Some(600.0), || tangent_termination(&cases));
    let (runs, skipped) = pipeline_runs(&cases);
    run.run(8, "branching chain identities", None, || chain_identities(&runs, &skipped));
    run.run(9, "quasi-product row sums", None, || row_sums(&runs));
    run.run(10, "norm machinery", Some(30.0), norm_machinery);
    run.run(11, "branching profiles", Some(30.0), branching_profiles);
    run.run(12, "determinism", None, determinism);
    if run.failed.is_empty() {
        println!("acceptance: all 12 criteria pass");
    } else {
        println!("acceptance: failed criteria {:?}", run.failed);
        std::process::exit(1);
    }
}
