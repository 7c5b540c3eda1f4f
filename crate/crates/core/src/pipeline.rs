//! End-to-end runs: tangent search, per-direction tube refinements, the
//! quasi-product in a reference direction and the audits built on it.

use crate::audit::{
    arc_chain, mu_v_concentration, theta_pushforward_concentration, ArcChain, AuditParams,
    ConcentrationReport, ThetaConcentration,
};
use crate::dyadic::{assouad_exponent_1d, project, AssouadWitness1D, Direction, DyadicScale, GridPointSet};
use crate::error::{Error, Result};
use crate::generators::DirectionSet;
use crate::measure::DiscreteMeasure;
use crate::quasi_product::{
    build_nu_prime, density_diagnostics, extract_grids, heavy_squares, restrict_good,
    select_heavy_tube, DensityDiagnostics, HeavySquareFamily, HeavyTube, QuasiProduct,
};
use crate::tubes::{
    bad_set, branching_chain, default_q, nonconcentration_refine, tangent_search, topdown_refine,
    BadBallTest, Growth, NonConcentration, RefinedChain, TangentParams, TangentResult,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// `N`; `Q = {0, 2^-2N, 2^(-N+2), ..., 1/2, 1}`.
    pub n: u32,
    pub delta0_exp: u32,
    pub d: f64,
    /// Target projection exponent `D`.
    pub big_d: f64,
    pub alpha: f64,
    pub tau: f64,
    pub growth: Growth,
    pub pigeon_c: f64,
    /// `C tau` in the heavy-square threshold `Delta^(dp + C tau)`.
    pub heavy_c_tau: f64,
    /// Chain level of the thick tubes; the narrow tubes sit one level below.
    pub thick_level: usize,
    pub audit_factor: f64,
    pub max_seconds: Option<f64>,
}

impl PipelineConfig {
    pub fn new(n: u32, delta0_exp: u32, d: f64, big_d: f64) -> Self {
        Self {
            n,
            delta0_exp,
            d,
            big_d,
            alpha: 0.1,
            tau: 0.01,
            growth: Growth::default(),
            pigeon_c: 1.0,
            heavy_c_tau: 0.05,
            thick_level: 1,
            audit_factor: 1.0,
            max_seconds: None,
        }
    }

    pub fn q(&self) -> Result<Vec<f64>> {
        default_q(self.n)
    }

    pub fn tangent_params(&self) -> Result<TangentParams> {
        Ok(TangentParams {
            q: self.q()?,
            alpha: self.alpha,
            tau: self.tau,
            growth: self.growth,
            pigeon_c: self.pigeon_c,
            d: self.d,
            max_seconds: self.max_seconds,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.big_d > 0.0 && self.big_d < self.d.min(1.0)) {
            return Err(Error::InvalidArgument(format!(
                "D = {} must lie in (0, min(d, 1)) with d = {}",
                self.big_d, self.d
            )));
        }
        if self.delta0_exp == 0 {
            return Err(Error::InvalidArgument("delta0 must be below 1".into()));
        }
        let n = self.n as usize;
        if self.thick_level == 0 || self.thick_level + 2 > n {
            return Err(Error::InvalidArgument(format!(
                "thick_level = {} must lie in 1..={} for N = {}",
                self.thick_level,
                n.saturating_sub(2),
                self.n
            )));
        }
        self.q().map(|_| ())
    }
}

/// Relabels a degenerate error with the pipeline stage it came from.
fn staged<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Degenerate { stage: inner, detail, trace } => Error::Degenerate {
            stage: if inner == stage { inner } else { format!("{stage}/{inner}") },
            detail,
            trace,
        },
        other => other,
    })
}

/// The non-concentration refinement and branching chain of one surviving direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionStage {
    pub direction: Direction,
    pub weight: f64,
    pub s_e: f64,
    pub nc: NonConcentration,
    pub chain: RefinedChain,
}

/// Runs the rectangle refinement and the refined branching chain for every
/// direction kept by the tangent search.
pub fn direction_stages(t: &TangentResult, q: &[f64], d: f64, alpha: f64) -> Result<Vec<DirectionStage>> {
    let k = t.delta.exponent();
    let rect_exp = (q[1] * k as f64).round() as u32;
    t.bands
        .par_iter()
        .enumerate()
        .map(|(i, band)| {
            let s_e = t.s_of_e[i];
            let nc = staged(
                "nonconcentration",
                nonconcentration_refine(&t.nu, &band.tubes, rect_exp, d, s_e, alpha),
            )?;
            let raw = branching_chain(&t.nu, &nc.k_g, &nc.good_tubes, q, s_e, alpha);
            Ok(DirectionStage {
                direction: t.directions.directions[i],
                weight: t.directions.weights[i],
                s_e,
                chain: topdown_refine(&raw, &t.nu),
                nc,
            })
        })
        .collect()
}

/// Index of the direction `e1` maximizing `sum_e sigma(e) nu(K_e cap K_e1)`;
/// ties go to the first.
pub fn choose_reference(stages: &[DirectionStage], nu: &DiscreteMeasure) -> Option<usize> {
    let scores: Vec<f64> = stages
        .par_iter()
        .map(|s1| {
            stages
                .iter()
                .map(|s| s.weight * nu.mass_of(&s.chain.k_e.intersection(&s1.chain.k_e)))
                .sum()
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in scores.iter().enumerate() {
        if best.map_or(true, |b| v > b.1) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEntry {
    pub direction: Direction,
    pub report: Option<ThetaConcentration>,
    /// Why the entry was not evaluated.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub tangent: TangentResult,
    pub stages: Vec<DirectionStage>,
    pub reference: usize,
    /// The fixed direction `e` paired with `e1`.
    pub companion: usize,
    /// `(a_p, a_q)`: exponents of `Delta^p` and `Delta^q`.
    pub scale_pair: (u32, u32),
    pub t_th: f64,
    pub bad_mass: f64,
    pub heavy: HeavySquareFamily,
    pub tube: HeavyTube,
    pub quasi: QuasiProduct,
    pub density: DensityDiagnostics,
    pub concentration: ConcentrationReport,
    pub theta: Vec<ThetaEntry>,
}

impl PipelineReport {
    pub fn telescoping_holds(&self) -> bool {
        self.stages.iter().all(|s| s.chain.chain.telescoping_holds)
    }

    pub fn nesting_holds(&self) -> bool {
        self.stages.iter().all(|s| s.chain.nesting_holds && s.chain.contained_holds)
    }
}

/// Signed angle from `a` to `b` in `[-pi/2, pi/2)`.
fn angle_offset(a: &Direction, b: &Direction) -> f64 {
    (b.angle() - a.angle() + PI / 2.0).rem_euclid(PI) - PI / 2.0
}

pub fn run_pipeline(mu: &DiscreteMeasure, sigma: &DirectionSet, cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let q = cfg.q()?;
    let delta0 = DyadicScale::new(cfg.delta0_exp)?;
    let t = staged("tangent", tangent_search(mu, sigma, &cfg.tangent_params()?, delta0))?;
    let nu = &t.nu;
    let k = t.delta.exponent();
    let stages = direction_stages(&t, &q, cfg.d, cfg.alpha)?;
    let reference = choose_reference(&stages, nu)
        .ok_or_else(|| Error::degenerate("reference", "no surviving direction"))?;
    let st1 = &stages[reference];
    let e1 = st1.direction;
    let levels = &st1.chain.chain.levels;
    let kp = cfg.thick_level;
    let (a_p, a_q) = (levels[kp].width_exp, levels[kp - 1].width_exp);
    let t_th = levels[kp]
        .t
        .ok_or_else(|| Error::degenerate("heavy_squares", "thick tubes have unit width"))?;

    let index = nu.index();
    let test = BadBallTest {
        s_n: t.s,
        alpha: cfg.alpha,
        tau: cfg.tau,
        f_next: cfg.growth.eval(t.n + 1),
        d: cfg.d,
    };
    let bad = bad_set(nu, &index, &e1, (a_p, a_q), &test);
    let threshold = 2f64.powf(-(cfg.d * a_p as f64 + k as f64 * cfg.heavy_c_tau));

    // The fixed companion direction e: the largest nu(K_e cap K_e1) among e != e1.
    let companion = partner(&stages, reference, nu);
    let k_e = &stages[companion].chain.k_e;
    let heavy = heavy_squares(nu, k_e, &st1.chain.k_e, &e1, a_p, threshold, &bad.points);
    let tube = staged("heavy_tube", select_heavy_tube(&heavy, &levels[kp].tubes, t_th, cfg.d))?;
    let grids = staged("grids", extract_grids(&tube, &levels[kp - 1].tubes))?;
    let mut quasi = build_nu_prime(nu, k_e, &st1.chain.k_e, &tube, &grids, t_th);
    let good = staged("restrict_good", restrict_good(&quasi, cfg.d, cfg.alpha, q[1]))?;
    quasi.good = Some(good);
    let density = density_diagnostics(&quasi)?;

    let params = AuditParams {
        d: cfg.d,
        s_e1: st1.s_e,
        alpha: cfg.alpha,
        q1: q[1],
        delta_exp: k,
        audit_factor: cfg.audit_factor,
    };
    let concentration = staged(
        "audit",
        mu_v_concentration(&quasi, &st1.chain, Some(&st1.nc), nu, &params),
    )?;

    let mu_v = quasi.mu_v()?;
    let eps1 = 2f64.powi(-(cfg.n as i32));
    let floor = 2f64.powf(-(a_p as f64 - k as f64 * eps1));
    let theta_threshold = 2f64.powf(-(k as f64) * q[1] * (cfg.d - cfg.big_d) / 3.0);
    let theta = stages
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != reference)
        .map(|(_, s)| {
            let th = angle_offset(&e1, &s.direction).tan();
            if th.abs() > 1.0 {
                return ThetaEntry {
                    direction: s.direction,
                    report: None,
                    skipped: Some(format!("|theta| = {:.4} exceeds 1", th.abs())),
                };
            }
            match theta_pushforward_concentration(&mu_v, th, a_p, floor, theta_threshold) {
                Ok(r) => ThetaEntry {
                    direction: s.direction,
                    report: Some(r),
                    skipped: None,
                },
                Err(e) => ThetaEntry {
                    direction: s.direction,
                    report: None,
                    skipped: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(PipelineReport {
        tangent: t.clone(),
        stages,
        reference,
        companion,
        scale_pair: (a_p, a_q),
        t_th,
        bad_mass: bad.mass,
        heavy,
        tube,
        quasi,
        density,
        concentration,
        theta,
    })
}

/// The direction `e != e1` maximizing `nu(K_e cap K_e1)`; `e1` itself when alone.
fn partner(stages: &[DirectionStage], reference: usize, nu: &DiscreteMeasure) -> usize {
    let k1 = &stages[reference].chain.k_e;
    let mut best = (reference, f64::NEG_INFINITY);
    for (i, s) in stages.iter().enumerate() {
        if i == reference {
            continue;
        }
        let m = nu.mass_of(&s.chain.k_e.intersection(k1));
        if m > best.1 {
            best = (i, m);
        }
    }
    best.0
}

/// Scale pairs for one-dimensional Assouad exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepScales {
    pub radii: Vec<u32>,
    pub ratios: Vec<u32>,
}

impl SweepScales {
    /// Radii `1/2 .. 1/8` and ratios up to half of the remaining scales.
    pub fn for_grid(exp: u32) -> Self {
        let radii: Vec<u32> = (1..=3).filter(|&r| r < exp).collect();
        let top = exp.saturating_sub(3);
        let ratios: Vec<u32> = (top / 2..=top).filter(|&j| j >= 2).collect();
        Self { radii, ratios }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionExponent {
    pub angle: f64,
    pub exponent: f64,
    pub witness: Option<AssouadWitness1D>,
}

/// Finite-scale Assouad exponent of `pi_e(set)` for each direction.
pub fn projection_exponents(
    set: &GridPointSet,
    directions: &[Direction],
    scales: &SweepScales,
) -> Result<Vec<DirectionExponent>> {
    let radii = scales
        .radii
        .iter()
        .map(|&r| DyadicScale::new(r))
        .collect::<Result<Vec<_>>>()?;
    let min_scale = set.scale().value();
    Ok(directions
        .par_iter()
        .map(|e| {
            let est = assouad_exponent_1d(&project(set, e), &radii, &scales.ratios, min_scale);
            DirectionExponent {
                angle: e.angle(),
                exponent: est.exponent,
                witness: est.witness,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    /// Directions whose projected exponent is below `D`.
    pub exceptional: Vec<DirectionExponent>,
    pub exceptional_mass: f64,
    pub mass_limit: f64,
    pub arc_chain: Option<ArcChain>,
    /// Frostman constant of `sigma` at exponent `eps0`.
    pub c_sigma: f64,
}

/// PASS when the directions with projected exponent below `D` carry at most
/// `mass_limit` of `sigma`. The arc chain over the surviving directions of
/// `report` is attached when a pipeline run is available.
pub fn verdict(
    sigma: &DirectionSet,
    exponents: &[DirectionExponent],
    big_d: f64,
    eps0: f64,
    mass_limit: f64,
    report: Option<&PipelineReport>,
    q: &[f64],
) -> Result<Verdict> {
    let mut exceptional = Vec::new();
    let mut mass = 0.0;
    for (i, ex) in exponents.iter().enumerate() {
        if ex.exponent < big_d {
            mass += sigma.weights[i];
            exceptional.push(ex.clone());
        }
    }
    let radii_all: Vec<f64> = (1..=12).map(|k| 2f64.powi(-k)).collect();
    let c_sigma = sigma.frostman_constant(eps0, &radii_all);
    let arc = match report {
        None => None,
        Some(r) => {
            let k = r.tangent.delta.exponent() as f64;
            let radii: Vec<f64> = q.iter().skip(2).map(|&qi| 2f64.powf(-qi * k)).collect();
            Some(arc_chain(&r.tangent.directions, &radii, c_sigma, eps0, 2f64.powf(-k))?)
        }
    };
    Ok(Verdict {
        pass: mass <= mass_limit,
        exceptional,
        exceptional_mass: mass,
        mass_limit,
        arc_chain: arc,
        c_sigma,
    })
}
