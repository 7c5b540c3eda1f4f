use assouad_core::dyadic::{Direction, DyadicScale};
use assouad_core::generators::{
    cantor_1d, direction_frostman_set, horizontal_segment, ifs_attractor, product_measure, staircase,
    DirectionSet, IfsSystem,
};
use assouad_core::measure::{read_measure_csv, DiscreteMeasure};
use assouad_core::pipeline::{PipelineConfig, SweepScales};
use assouad_core::tubes::{default_q, Growth};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// A configuration problem, named by the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SubjectSpec {
    /// Four squares of side 1/4 at the corners, centred on the origin.
    FourCorner {
        grid_exp: Option<u32>,
    },
    /// Uniform probability on a `2^-k` grid over `[lo, hi)^2`, by default `[-1, 1)^2`.
    FullGrid {
        grid_exp: Option<u32>,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
    HorizontalSegment {
        grid_exp: Option<u32>,
    },
    Staircase {
        grid_exp: Option<u32>,
        step_exp: u32,
    },
    /// `C x C` with `C` the `base`-adic Cantor measure on `digits`.
    ProductCantor {
        base: u32,
        digits: Vec<u32>,
        levels: u32,
        #[serde(default)]
        offset: f64,
    },
    /// Cells of a `base x base` grid; `cells` lists `(column, row)`.
    GridIfs {
        grid_exp: Option<u32>,
        base: u32,
        cells: Vec<(u32, u32)>,
        #[serde(default)]
        offset: (f64, f64),
    },
    /// `count` random cells of a `base x base` grid, drawn from the run seed.
    RandomIfs {
        grid_exp: Option<u32>,
        base: u32,
        count: usize,
    },
    /// An IFS in the JSON format of `IfsSystem::from_json`.
    IfsJson {
        grid_exp: Option<u32>,
        path: PathBuf,
    },
    /// A measure written by `generate`.
    Csv {
        path: PathBuf,
    },
}

fn default_lo() -> f64 {
    -1.0
}

fn default_hi() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DirectionSpec {
    /// `count` angles `k pi / count`.
    Uniform { count: usize },
    Single { angle: f64 },
    List { angles: Vec<f64> },
    /// A greedy `(2^-delta_exp, eps0)`-set drawn from the run seed.
    Frostman { delta_exp: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "default_heavy")]
    pub heavy_c_tau: f64,
    #[serde(default = "one_usize")]
    pub thick_level: usize,
    #[serde(default = "one_f64")]
    pub audit_factor: f64,
    #[serde(default = "one_f64")]
    pub pigeon_c: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            heavy_c_tau: default_heavy(),
            thick_level: 1,
            audit_factor: 1.0,
            pigeon_c: 1.0,
        }
    }
}

fn default_heavy() -> f64 {
    0.05
}

fn one_usize() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSection {
    /// Exponents of the outer radii; defaults depend on the grid.
    pub radii: Option<Vec<u32>>,
    /// Exponents `j` of the ratios `R / r = 2^j`.
    pub ratios: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_mass_limit")]
    pub mass_limit: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            mass_limit: default_mass_limit(),
        }
    }
}

fn default_mass_limit() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "default_m")]
    pub m: u32,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// `kappa` in `||mu * nu|| >= Delta^kappa ||mu||`.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// `C_E` for the porosity check of `D_h`.
    #[serde(default = "default_c_e")]
    pub c_e: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            m: default_m(),
            beta: default_beta(),
            kappa: default_kappa(),
            c_e: default_c_e(),
        }
    }
}

fn default_m() -> u32 {
    4
}

fn default_beta() -> f64 {
    0.2
}

fn default_kappa() -> f64 {
    0.1
}

fn default_c_e() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `delta0 = 2^-delta0_exp`; also the default subject grid.
    pub delta0_exp: u32,
    pub d: f64,
    #[serde(rename = "D")]
    pub big_d: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(rename = "N", default = "default_n")]
    pub n: u32,
    /// When given, must equal the scale list derived from `N`.
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default = "default_growth_base")]
    pub growth_base: f64,
    #[serde(default = "default_growth_ratio")]
    pub growth_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_cells")]
    pub max_cells: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_seconds: Option<f64>,
    pub subject: SubjectSpec,
    pub directions: DirectionSpec,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub dims: DimsSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_eps0() -> f64 {
    0.1
}

fn default_alpha() -> f64 {
    0.1
}

fn default_tau() -> f64 {
    0.01
}

fn default_n() -> u32 {
    4
}

fn default_growth_base() -> f64 {
    10.0
}

fn default_growth_ratio() -> f64 {
    4.0
}

fn default_max_cells() -> u64 {
    1 << 24
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .map(|line| format!("line {line}"))
                .unwrap_or_else(|| "config".into());
            bad(&field, e.message().to_string())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative subject paths are read from the config's directory.
        if let Some(dir) = path.parent() {
            match &mut cfg.subject {
                SubjectSpec::IfsJson { path, .. } | SubjectSpec::Csv { path } if path.is_relative() => {
                    *path = dir.join(&*path);
                }
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.d > 0.0 && self.d <= 2.0) {
            return Err(bad("d", format!("{} must lie in (0, 2]", self.d)));
        }
        if !(self.big_d > 0.0 && self.big_d < self.d.min(1.0)) {
            return Err(bad(
                "D",
                format!("{} must lie in (0, min(d, 1)) = (0, {})", self.big_d, self.d.min(1.0)),
            ));
        }
        if self.delta0_exp == 0 || self.delta0_exp > 30 {
            return Err(bad("delta0_exp", "must lie in 1..=30"));
        }
        if !(self.eps0 > 0.0 && self.eps0 <= 1.0) {
            return Err(bad("eps0", "must lie in (0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("alpha", "must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(bad("tau", "must lie in (0, 1)"));
        }
        if self.n < 3 {
            return Err(bad("N", "must be at least 3"));
        }
        let derived = default_q(self.n).map_err(|e| bad("N", e.to_string()))?;
        if let Some(q) = &self.q {
            if q.len() != derived.len() || q.iter().zip(&derived).any(|(a, b)| (a - b).abs() > 1e-12) {
                return Err(bad("Q", format!("expected {derived:?} for N = {}", self.n)));
            }
        }
        if !(self.growth_base > 0.0 && self.growth_ratio >= 1.0) {
            return Err(bad("growth_base", "need base > 0 and ratio >= 1"));
        }
        if let Some(s) = self.max_seconds {
            if !(s > 0.0) {
                return Err(bad("max_seconds", "must be positive"));
            }
        }
        let p = &self.pipeline;
        if p.thick_level == 0 || p.thick_level + 2 > self.n as usize {
            return Err(bad(
                "pipeline.thick_level",
                format!("must lie in 1..={} for N = {}", self.n - 2, self.n),
            ));
        }
        if !(p.heavy_c_tau >= 0.0) {
            return Err(bad("pipeline.heavy_c_tau", "must be nonnegative"));
        }
        if !(p.audit_factor >= 1.0) {
            return Err(bad("pipeline.audit_factor", "must be at least 1"));
        }
        if !(p.pigeon_c > 0.0) {
            return Err(bad("pipeline.pigeon_c", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.verify.mass_limit) {
            return Err(bad("verify.mass_limit", "must lie in [0, 1]"));
        }
        if self.probe.m == 0 || self.probe.m > 20 {
            return Err(bad("probe.m", "must lie in 1..=20"));
        }
        match &self.directions {
            DirectionSpec::Uniform { count } if *count > 100_000 => {
                return Err(bad("directions.count", "at most 100000"));
            }
            DirectionSpec::Frostman { delta_exp } if *delta_exp == 0 || *delta_exp > 20 => {
                return Err(bad("directions.delta_exp", "must lie in 1..=20"));
            }
            _ => {}
        }
        if let Some(g) = self.subject_grid_exp() {
            if g < self.delta0_exp {
                return Err(bad(
                    "subject.grid_exp",
                    format!("grid 2^-{g} is coarser than delta0 = 2^-{}", self.delta0_exp),
                ));
            }
        }
        if let (Some(r), Some(j)) = (&self.dims.radii, &self.dims.ratios) {
            if r.iter().chain(j).any(|&x| x > 30) {
                return Err(bad("dims", "scale exponents must be at most 30"));
            }
        }
        Ok(())
    }

    /// The subject grid when it is known without building the subject.
    fn subject_grid_exp(&self) -> Option<u32> {
        match &self.subject {
            SubjectSpec::FourCorner { grid_exp }
            | SubjectSpec::FullGrid { grid_exp, .. }
            | SubjectSpec::HorizontalSegment { grid_exp }
            | SubjectSpec::Staircase { grid_exp, .. }
            | SubjectSpec::GridIfs { grid_exp, .. }
            | SubjectSpec::RandomIfs { grid_exp, .. }
            | SubjectSpec::IfsJson { grid_exp, .. } => Some(grid_exp.unwrap_or(self.delta0_exp)),
            SubjectSpec::ProductCantor { base, levels, .. } => Some(base.trailing_zeros() * levels),
            SubjectSpec::Csv { .. } => None,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::new(self.n, self.delta0_exp, self.d, self.big_d);
        c.alpha = self.alpha;
        c.tau = self.tau;
        c.growth = Growth {
            base: self.growth_base,
            ratio: self.growth_ratio,
        };
        c.pigeon_c = self.pipeline.pigeon_c;
        c.heavy_c_tau = self.pipeline.heavy_c_tau;
        c.thick_level = self.pipeline.thick_level;
        c.audit_factor = self.pipeline.audit_factor;
        c.max_seconds = self.max_seconds;
        c
    }

    pub fn sweep_scales(&self, grid_exp: u32) -> SweepScales {
        let d = SweepScales::for_grid(grid_exp);
        SweepScales {
            radii: self.dims.radii.clone().unwrap_or(d.radii),
            ratios: self.dims.ratios.clone().unwrap_or(d.ratios),
        }
    }

    fn grid(&self, g: Option<u32>) -> assouad_core::Result<DyadicScale> {
        DyadicScale::new(g.unwrap_or(self.delta0_exp))
    }

    pub fn build_subject(&self) -> assouad_core::Result<DiscreteMeasure> {
        let budget = self.max_cells;
        let guard = |k: DyadicScale, cells: u64| {
            if cells > budget {
                Err(assouad_core::Error::Resource(format!(
                    "{cells} cells at 2^-{} exceed the cell budget {budget}",
                    k.exponent()
                )))
            } else {
                Ok(())
            }
        };
        match &self.subject {
            SubjectSpec::FourCorner { grid_exp } => {
                Ok(ifs_attractor(&IfsSystem::four_corner_centered(), self.grid(*grid_exp)?, budget)?.measure)
            }
            SubjectSpec::FullGrid { grid_exp, lo, hi } => {
                let k = self.grid(*grid_exp)?;
                let side = ((hi - lo) * k.value().recip()).max(0.0) as u64;
                guard(k, side.saturating_mul(side))?;
                let set = assouad_core::dyadic::GridPointSet::full_grid(k, *lo, *hi);
                DiscreteMeasure::counting(&set)?.normalized()
            }
            SubjectSpec::HorizontalSegment { grid_exp } => {
                let k = self.grid(*grid_exp)?;
                guard(k, 1u64 << k.exponent())?;
                horizontal_segment(k, 1.0)
            }
            SubjectSpec::Staircase { grid_exp, step_exp } => {
                let k = self.grid(*grid_exp)?;
                guard(k, 1u64 << k.exponent())?;
                staircase(k, *step_exp)
            }
            SubjectSpec::ProductCantor {
                base,
                digits,
                levels,
                offset,
            } => {
                let cells = (digits.len() as f64).powi(2 * *levels as i32);
                if cells > budget as f64 {
                    return Err(assouad_core::Error::Resource(format!(
                        "{cells} cells exceed the cell budget {budget}"
                    )));
                }
                let c = cantor_1d(*base, digits, *levels, *offset)?;
                product_measure(&c, &c)
            }
            SubjectSpec::GridIfs {
                grid_exp,
                base,
                cells,
                offset,
            } => Ok(ifs_attractor(&IfsSystem::grid(*base, cells, *offset)?, self.grid(*grid_exp)?, budget)?.measure),
            SubjectSpec::RandomIfs { grid_exp, base, count } => Ok(ifs_attractor(
                &IfsSystem::random_grid(self.seed, *base, *count)?,
                self.grid(*grid_exp)?,
                budget,
            )?
            .measure),
            SubjectSpec::IfsJson { grid_exp, path } => {
                let text = std::fs::read_to_string(path)?;
                Ok(ifs_attractor(&IfsSystem::from_json(&text)?, self.grid(*grid_exp)?, budget)?.measure)
            }
            SubjectSpec::Csv { path } => {
                let text = std::fs::read_to_string(path)?;
                let body: String = text
                    .lines()
                    .filter(|l| !l.starts_with('#'))
                    .map(|l| format!("{l}\n"))
                    .collect();
                let mu = read_measure_csv(body.as_bytes())?;
                guard(mu.scale(), mu.len() as u64)?;
                Ok(mu)
            }
        }
    }

    pub fn build_directions(&self) -> assouad_core::Result<DirectionSet> {
        Ok(match &self.directions {
            DirectionSpec::Uniform { count } => DirectionSet::uniform(*count),
            DirectionSpec::Single { angle } => DirectionSet::single(*angle),
            DirectionSpec::List { angles } => {
                DirectionSet::from_directions(angles.iter().map(|&a| Direction::new(a)).collect())
            }
            DirectionSpec::Frostman { delta_exp } => {
                direction_frostman_set(self.eps0, 2f64.powi(-(*delta_exp as i32)), self.seed)?
            }
        })
    }
}
