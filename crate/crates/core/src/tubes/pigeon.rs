use super::{scale, tube_masses};
use crate::dyadic::{Direction, TubeFamily};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Bands `j` with `2^-j <= m <= 2^(-j+1)`. An exact power of two sits in two bands.
pub fn band_of(m: f64) -> Vec<i64> {
    if !(m > 0.0) || !m.is_finite() {
        return Vec::new();
    }
    let mut fl = m.log2().floor() as i64;
    while 2f64.powi(fl as i32) > m {
        fl -= 1;
    }
    while 2f64.powi(fl as i32 + 1) <= m {
        fl += 1;
    }
    let j = -fl;
    if 2f64.powi(fl as i32) == m {
        vec![j, j + 1]
    } else {
        vec![j]
    }
}

/// A closed dyadic mass band and the entries falling in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub j: i64,
    /// Positions into the input slice.
    pub members: Vec<usize>,
    pub mass: f64,
}

/// The band of maximal total mass; ties go to the smallest `j`.
pub fn select_band(masses: &[f64], j_max: Option<i64>) -> Option<Band> {
    let mut per_band: BTreeMap<i64, f64> = BTreeMap::new();
    for &m in masses {
        for j in band_of(m) {
            if j_max.map_or(true, |top| j <= top) {
                *per_band.entry(j).or_insert(0.0) += m;
            }
        }
    }
    let mut best: Option<(i64, f64)> = None;
    for (&j, &mass) in &per_band {
        if best.map_or(true, |b| mass > b.1) {
            best = Some((j, mass));
        }
    }
    let (j, mass) = best?;
    let members = masses
        .iter()
        .enumerate()
        .filter(|(_, &m)| band_of(m).contains(&j))
        .map(|(i, _)| i)
        .collect();
    Some(Band { j, members, mass })
}

/// Pigeonholes `(tube index, mass)` entries at width `2^-delta_exp`, keeping
/// bands with `2^-j >= delta^(C+1)/16`.
pub fn pigeonhole_masses(entries: &[(i64, f64)], delta_exp: u32, c: f64) -> Result<Band> {
    if delta_exp == 0 {
        return Err(Error::InvalidScale("pigeonholing needs delta < 1".into()));
    }
    let k = delta_exp as f64;
    let total: f64 = entries.iter().map(|e| e.1).sum();
    if total.log2() < -c * k - 1e-9 {
        return Err(Error::Precondition(format!(
            "tube mass {total:e} is below delta^C = 2^-{}",
            c * k
        )));
    }
    let j_max = ((c + 1.0) * k + 4.0 + 1e-9).floor() as i64;
    let masses: Vec<f64> = entries.iter().map(|e| e.1).collect();
    select_band(&masses, Some(j_max))
        .ok_or_else(|| Error::degenerate("pigeonhole", "no tube mass above the band floor"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PigeonBand {
    pub j: i64,
    /// `delta^s = 2^-j`.
    pub s: f64,
    pub tubes: TubeFamily,
    /// `nu(E cap T)` for each tube, in the order of `tubes.indices`.
    pub masses: Vec<f64>,
    pub mass: f64,
    /// `nu(E)` over all input tubes.
    pub total: f64,
    /// Whether `mass >= total / (2 ceil(C log2(1/delta)))`.
    pub meets_mass_guarantee: bool,
}

impl PigeonBand {
    /// `2^-j <= m <= 2^(-j+1)` for every member tube.
    pub fn band_condition_holds(&self) -> bool {
        let lo = 2f64.powi(-self.j as i32);
        self.masses.iter().all(|&m| lo <= m && m <= 2.0 * lo)
    }
}

/// Pigeonholes the tubes of `tubes` by their `nu`-mass in `B_0`.
pub fn pigeonhole_tubes(nu: &DiscreteMeasure, tubes: &TubeFamily, c: f64) -> Result<PigeonBand> {
    let exp = tubes.width.exponent();
    let entries: Vec<(i64, f64)> = tube_masses(nu, &tubes.direction, exp)
        .into_iter()
        .filter(|(i, _)| tubes.contains_index(*i))
        .collect();
    let band = pigeonhole_masses(&entries, exp, c)?;
    Ok(band_result(tubes.direction, &entries, band, exp, c))
}

pub(crate) fn band_result(
    direction: Direction,
    entries: &[(i64, f64)],
    band: Band,
    exp: u32,
    c: f64,
) -> PigeonBand {
    let total: f64 = entries.iter().map(|e| e.1).sum();
    let idx: Vec<i64> = band.members.iter().map(|&i| entries[i].0).collect();
    let masses = band.members.iter().map(|&i| entries[i].1).collect();
    let bands = (c * exp as f64).ceil().max(1.0);
    PigeonBand {
        j: band.j,
        s: band.j as f64 / exp as f64,
        tubes: TubeFamily::new(direction, scale(exp), idx),
        masses,
        mass: band.mass,
        total,
        meets_mass_guarantee: band.mass >= total / (2.0 * bands) - 1e-15,
    }
}
