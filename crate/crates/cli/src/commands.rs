use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{Header, Writer};
use assouad_core::dyadic::{Direction, DyadicScale, DyadicSet1D};
use assouad_core::generators::DirectionSet;
use assouad_core::measure::{write_measure_csv, DiscreteMeasure};
use assouad_core::pipeline::{projection_exponents, run_pipeline, verdict, DirectionExponent, PipelineReport};
use assouad_core::smoothing::{
    branching_profile, convolve, norm_ratio, porosity_check, projection_l2_identity_check, scale_pushforward,
    shmerkin_norm, BranchingProfile, PorosityReport, ProjectionIdentity,
};
use assouad_core::tubes::tangent_search;
use serde::Serialize;
use serde_json::json;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Generate,
    Dims,
    Tangent,
    Quasiprod,
    InverseProbe,
    Audit,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Dims => "dims",
            Command::Tangent => "tangent",
            Command::Quasiprod => "quasiprod",
            Command::InverseProbe => "inverse-probe",
            Command::Audit => "audit",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Resource(String),
    Degenerate(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Resource(_) => 3,
            CliError::Degenerate(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Resource(m) => write!(f, "resource limit: {m}"),
            CliError::Degenerate(m) => write!(f, "degenerate pipeline: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<assouad_core::Error> for CliError {
    fn from(e: assouad_core::Error) -> Self {
        use assouad_core::Error as E;
        match e {
            E::Resource(m) => CliError::Resource(m),
            E::Degenerate { .. } => CliError::Degenerate(e.to_string()),
            E::InvalidArgument(_) | E::InvalidScale(_) | E::Parse(_) => CliError::Config(ConfigError {
                field: "config".into(),
                message: e.to_string(),
            }),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

/// Everything a command needs besides the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub max_cells: Option<u64>,
    pub max_seconds: Option<f64>,
}

pub fn resolve(mut cfg: ExperimentConfig, o: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(d) = &o.out {
        cfg.output.dir = d.clone();
    }
    if let Some(c) = o.max_cells {
        cfg.max_cells = c;
    }
    if let Some(s) = o.max_seconds {
        cfg.max_seconds = Some(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `cmd` and returns the files written. On a resource abort the partial
/// results are written with `"partial": true` before the error is returned.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let header = Header {
        command: cmd.name().to_string(),
        config: cfg.clone(),
    };
    let mut w = Writer::new(&cfg.output.dir, header)?;
    let result = match cmd {
        Command::Generate => generate(cfg, &mut w),
        Command::Dims => dims(cfg, &mut w),
        Command::Tangent => tangent(cfg, &mut w),
        Command::Quasiprod => quasiprod(cfg, &mut w),
        Command::InverseProbe => inverse_probe(cfg, &mut w),
        Command::Audit => audit(cfg, &mut w),
        Command::Verify => verify(cfg, &mut w),
    };
    match result {
        Ok(()) => Ok(w.written),
        Err(CliError::Resource(m)) => {
            if !w.written.iter().any(|p| p.extension().is_some_and(|x| x == "partial")) {
                let name = format!("{}.partial.json", cmd.name());
                w.json(&name, &json!({"partial": true, "reason": m}))?;
            }
            Err(CliError::Resource(m))
        }
        Err(e) => Err(e),
    }
}

fn generate(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let mu = cfg.build_subject()?;
    let mut buf = Vec::new();
    write_measure_csv(&mu, &mut buf)?;
    w.csv("subject.csv", &String::from_utf8(buf).expect("ascii"))?;
    let sigma = cfg.build_directions()?;
    let mut s = String::from("angle,weight\n");
    for (d, wt) in sigma.directions.iter().zip(&sigma.weights) {
        writeln!(s, "{:.17e},{:.17e}", d.angle(), wt).unwrap();
    }
    w.csv("directions.csv", &s)?;
    Ok(())
}

fn exponent_rows(rows: &[DirectionExponent]) -> String {
    let mut s = String::from("angle,exponent,witness_center,witness_big_exp,witness_small_exp,witness_count\n");
    for r in rows {
        match &r.witness {
            Some(wt) => writeln!(
                s,
                "{:.17e},{:.17e},{:.17e},{},{},{}",
                r.angle,
                r.exponent,
                wt.center,
                wt.big.exponent(),
                wt.small.exponent(),
                wt.count
            ),
            None => writeln!(s, "{:.17e},{:.17e},,,,", r.angle, r.exponent),
        }
        .unwrap();
    }
    s
}

fn dims(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let start = Instant::now();
    let mu = cfg.build_subject()?;
    let sigma = cfg.build_directions()?;
    let scales = cfg.sweep_scales(mu.scale().exponent());
    let mut rows = Vec::with_capacity(sigma.len());
    for chunk in sigma.directions.chunks(16) {
        if let Some(limit) = cfg.max_seconds {
            if start.elapsed().as_secs_f64() > limit {
                let body = format!("# partial = true\n{}", exponent_rows(&rows));
                w.csv("dims.csv.partial", &body)?;
                return Err(CliError::Resource(format!(
                    "{} of {} directions done after {limit} s",
                    rows.len(),
                    sigma.len()
                )));
            }
        }
        rows.extend(projection_exponents(mu.support(), chunk, &scales)?);
    }
    w.csv("dims.csv", &exponent_rows(&rows))?;
    Ok(())
}

#[derive(Serialize)]
struct TangentSummary {
    n: usize,
    delta_exp: u32,
    s: f64,
    surviving_directions: usize,
    surviving_sigma_mass: f64,
    discarded_directions: usize,
    s_sequence: Vec<f64>,
    final_mass: f64,
    final_floor: f64,
    final_mass_ok: bool,
}

fn tangent(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let mu = cfg.build_subject()?;
    let sigma = cfg.build_directions()?;
    let pc = cfg.pipeline_config();
    let t = tangent_search(&mu, &sigma, &pc.tangent_params()?, DyadicScale::new(cfg.delta0_exp)?)?;
    w.jsonl("trace.jsonl", &t.trace)?;
    let summary = TangentSummary {
        n: t.n,
        delta_exp: t.delta.exponent(),
        s: t.s,
        surviving_directions: t.directions.len(),
        surviving_sigma_mass: t.directions.weights.iter().sum(),
        discarded_directions: t.discarded.len(),
        s_sequence: t.s_sequence.clone(),
        final_mass: t.final_mass,
        final_floor: t.final_floor,
        final_mass_ok: t.final_mass_ok,
    };
    w.json("tangent.json", &summary)?;
    Ok(())
}

/// The headline numbers of a pipeline run.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub n: usize,
    pub delta_exp: u32,
    pub s: f64,
    pub surviving_directions: usize,
    pub reference_angle: f64,
    pub companion_angle: f64,
    pub scale_pair: (u32, u32),
    pub t_th: f64,
    pub heavy_squares: usize,
    pub heavy_threshold: f64,
    pub bad_mass: f64,
    pub telescoping_holds: bool,
    pub nesting_holds: bool,
    pub row_sum_holds: bool,
    pub row_sum_max_rel_error: f64,
    pub eta: Option<f64>,
}

impl PipelineSummary {
    pub fn of(r: &PipelineReport) -> Self {
        Self {
            n: r.tangent.n,
            delta_exp: r.tangent.delta.exponent(),
            s: r.tangent.s,
            surviving_directions: r.stages.len(),
            reference_angle: r.stages[r.reference].direction.angle(),
            companion_angle: r.stages[r.companion].direction.angle(),
            scale_pair: r.scale_pair,
            t_th: r.t_th,
            heavy_squares: r.heavy.squares.len(),
            heavy_threshold: r.heavy.threshold,
            bad_mass: r.bad_mass,
            telescoping_holds: r.telescoping_holds(),
            nesting_holds: r.nesting_holds(),
            row_sum_holds: r.quasi.row_sum_holds,
            row_sum_max_rel_error: r.quasi.row_sum_max_rel_error,
            eta: r.quasi.good.as_ref().map(|g| g.eta),
        }
    }
}

fn pipeline(cfg: &ExperimentConfig) -> Result<(DiscreteMeasure, DirectionSet, PipelineReport), CliError> {
    let mu = cfg.build_subject()?;
    let sigma = cfg.build_directions()?;
    let report = run_pipeline(&mu, &sigma, &cfg.pipeline_config())?;
    Ok((mu, sigma, report))
}

fn quasiprod(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let (_, _, r) = pipeline(cfg)?;
    let good = r.quasi.good.as_ref();
    w.json(
        "quasiprod.json",
        &json!({
            "summary": PipelineSummary::of(&r),
            "quasi_product": r.quasi,
            "heavy_tube": r.tube,
            "min_anchor_fraction": r.heavy.min_anchor_fraction(),
            "density": r.density,
            "rows_meet_guarantee": good.map(|g| g.rows_meet_guarantee),
            "rows_keep_half": good.map(|g| g.rows_keep_half),
            "eta_benchmark": good.map(|g| g.eta_benchmark),
            "eta_holds": good.map(|g| g.eta_holds),
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ThetaProbe {
    angle: f64,
    theta: f64,
    /// `||mu_h * theta mu_v||_Sh / ||mu_h||_Sh` on the common grid.
    norm_gain: f64,
    /// Smallest `kappa` with `||mu_h * theta mu_v|| >= Delta^kappa ||mu_h||`.
    kappa_needed: Option<f64>,
    hypothesis_holds: bool,
    identity: ProjectionIdentity,
    profile: BranchingProfile,
}

fn inverse_probe(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let (_, _, r) = pipeline(cfg)?;
    let qp = &r.quasi;
    let mu_h = qp.mu_h()?;
    let mu_v = qp.mu_v()?;
    let c = mu_h.scale().exponent().min(mu_v.scale().exponent());
    let common = DyadicScale::new(c)?;
    let m = cfg.probe.m;
    let fine = DyadicScale::new(c.div_ceil(m).max(1) * m)?;
    let h = scale_pushforward(&mu_h, 1.0, common)?;
    let h_fine = h.refine(fine)?;
    let rho = common.value();
    let e1 = r.stages[r.reference].direction;
    let mut probes = Vec::new();
    for entry in &r.theta {
        let Some(t) = &entry.report else { continue };
        let v = scale_pushforward(&mu_v, t.theta, common)?;
        let conv = convolve(&h, &v)?;
        let gain = shmerkin_norm(&conv) / shmerkin_norm(&h);
        let kappa_needed = (c > 0).then(|| -gain.log2() / c as f64);
        let e_prime = Direction::from_vector(1.0, t.theta);
        probes.push(ThetaProbe {
            angle: entry.direction.angle(),
            theta: t.theta,
            norm_gain: gain,
            kappa_needed,
            hypothesis_holds: gain >= rho.powf(cfg.probe.kappa),
            identity: projection_l2_identity_check(&mu_h, &mu_v, &e_prime, rho)?,
            profile: branching_profile(&h_fine, m, cfg.probe.beta, Some(&v.refine(fine)?))?,
        });
    }
    let h_exp = qp.grids.h_exp;
    let pairs: Vec<(DyadicScale, DyadicScale)> = (0..h_exp)
        .flat_map(|big| (big + 1..=h_exp).map(move |small| (big, small)))
        .map(|(big, small)| Ok((DyadicScale::new(big)?, DyadicScale::new(small)?)))
        .collect::<assouad_core::Result<_>>()?;
    let porosity: Option<PorosityReport> = if pairs.is_empty() {
        None
    } else {
        let dh = DyadicSet1D::new(DyadicScale::new(h_exp)?, qp.grids.d_h.clone());
        Some(porosity_check(&dh, cfg.big_d, cfg.probe.c_e, &pairs)?)
    };
    w.json(
        "probe.json",
        &json!({
            "summary": PipelineSummary::of(&r),
            "reference_angle": e1.angle(),
            "common_exp": c,
            "norms": {
                "mu_h_sh": shmerkin_norm(&mu_h),
                "mu_v_sh": shmerkin_norm(&mu_v),
                "mu_h_ratio": norm_ratio(&mu_h),
                "mu_v_ratio": norm_ratio(&mu_v),
            },
            "profile_of_mu_h": branching_profile(&h_fine, m, cfg.probe.beta, None)?,
            "theta_probes": probes,
            "porosity_of_d_h": porosity,
        }),
    )?;
    Ok(())
}

fn audit(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let (_, _, r) = pipeline(cfg)?;
    let good = r.quasi.good.as_ref();
    let st = &r.stages[r.reference];
    w.json(
        "audit.json",
        &json!({
            "summary": PipelineSummary::of(&r),
            "concentration": r.concentration,
            "theta": r.theta,
            "identities": {
                "telescoping": r.telescoping_holds(),
                "nesting": r.nesting_holds(),
                "mass_identity": r.stages.iter().all(|s| s.chain.mass_identity_holds),
                "row_sum": r.quasi.row_sum_holds,
                "row_sum_max_rel_error": r.quasi.row_sum_max_rel_error,
            },
            "guarantees": {
                "rows_meet_guarantee": good.map(|g| g.rows_meet_guarantee),
                "rows_keep_half": good.map(|g| g.rows_keep_half),
                "eta": good.map(|g| g.eta),
                "eta_benchmark": good.map(|g| g.eta_benchmark),
                "eta_holds": good.map(|g| g.eta_holds),
                "min_anchor_fraction": r.heavy.min_anchor_fraction(),
                "final_mass_ok": r.tangent.final_mass_ok,
                "ball_ratio": st.nc.ball_ratio,
                "ball_benchmark": st.nc.ball_benchmark,
                "ball_ratio_holds": st.nc.ball_ratio_holds,
                "t_within_tolerance": st.chain.chain.t_within_tolerance,
                "chain_audit_factors": st.chain.audit_factors,
            },
        }),
    )?;
    Ok(())
}

fn verify(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let (mu, sigma, r) = pipeline(cfg)?;
    let scales = cfg.sweep_scales(mu.scale().exponent());
    let exps = projection_exponents(mu.support(), &sigma.directions, &scales)?;
    let q = cfg.pipeline_config().q()?;
    let v = verdict(&sigma, &exps, cfg.big_d, cfg.eps0, cfg.verify.mass_limit, Some(&r), &q)?;
    w.json(
        "verify.json",
        &json!({
            "verdict": if v.pass { "PASS" } else { "FAIL" },
            "details": v,
            "exponents": exps,
            "summary": PipelineSummary::of(&r),
        }),
    )?;
    Ok(())
}
