//! One-dimensional discretized measures, mollified L2 norms, convolution,
//! scaled push-forwards and multiscale branching structure.

mod delta;
mod porosity;
mod profile;

pub use delta::DeltaMeasure1D;
pub use porosity::{porosity_check, PorosityReport};
pub use profile::{branching_profile, BranchingClass, BranchingProfile};

use crate::dyadic::{tube_index, Direction, DyadicScale};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Certified range of `||mu||_Sh^2 / (Delta ||mu * psi_Delta||_2^2)` over
/// `Delta`-measures.
///
/// With `psi = chi_[-1,1]/2` the denominator equals
/// `(sum w_a^2 + sum w_a w_(a+Delta)) / 2`, so the ratio is `2 / (1 + rho)` with
/// `rho = sum w_a w_(a+Delta) / sum w_a^2` in `[0, 1)`. Isolated atoms give 2
/// and long uniform runs approach 1; a brute-force search over small
/// configurations confirms both ends.
pub const NORM_RATIO_BOUNDS: (f64, f64) = (1.0, 2.0);

/// Piecewise-constant density `mu * psi_rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifiedDensity {
    pub breakpoints: Vec<f64>,
    /// `values[i]` holds on `[breakpoints[i], breakpoints[i+1])`.
    pub values: Vec<f64>,
    pub l1: f64,
    pub l2: f64,
}

/// Mollifies atoms `(position, weight)` with `psi_rho = chi_[-rho, rho] / (2 rho)`.
pub fn mollify_atoms(atoms: &[(f64, f64)], rho: f64) -> MollifiedDensity {
    let h = 1.0 / (2.0 * rho);
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(2 * atoms.len());
    for &(x, w) in atoms {
        events.push((x - rho, w * h));
        events.push((x + rho, -w * h));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut breakpoints = Vec::new();
    let mut values = Vec::new();
    let mut level = 0.0;
    let mut i = 0;
    while i < events.len() {
        let x = events[i].0;
        while i < events.len() && events[i].0 == x {
            level += events[i].1;
            i += 1;
        }
        breakpoints.push(x);
        if i < events.len() {
            values.push(if level.abs() < 1e-300 { 0.0 } else { level });
        }
    }
    let (mut l1, mut l2sq) = (0.0, 0.0);
    for (k, v) in values.iter().enumerate() {
        let len = breakpoints[k + 1] - breakpoints[k];
        l1 += v.abs() * len;
        l2sq += v * v * len;
    }
    MollifiedDensity {
        breakpoints,
        values,
        l1,
        l2: l2sq.sqrt(),
    }
}

/// `mu * psi_rho` for `rho` no smaller than the grid step.
pub fn mollify(mu: &DeltaMeasure1D, rho: f64) -> Result<MollifiedDensity> {
    if rho < mu.scale().value() {
        return Err(Error::InvalidScale(format!(
            "mollifier radius {rho} is below the grid step {}",
            mu.scale().value()
        )));
    }
    Ok(mollify_atoms(&mu.real_atoms(), rho))
}

/// `sqrt(sum_x mu({x})^2)`.
pub fn shmerkin_norm(mu: &DeltaMeasure1D) -> f64 {
    mu.atoms().iter().map(|a| a.1 * a.1).sum::<f64>().sqrt()
}

/// `||mu||_Sh^2 / (Delta ||mu * psi_Delta||^2)`, which lies in [`NORM_RATIO_BOUNDS`].
pub fn norm_ratio(mu: &DeltaMeasure1D) -> f64 {
    let delta = mu.scale().value();
    let l2 = mollify_atoms(&mu.real_atoms(), delta).l2;
    shmerkin_norm(mu).powi(2) / (delta * l2 * l2)
}

/// `mu * nu` on a common grid; supports may leave `[-1,1)`.
pub fn convolve(mu: &DeltaMeasure1D, nu: &DeltaMeasure1D) -> Result<DeltaMeasure1D> {
    if mu.scale() != nu.scale() {
        return Err(Error::InvalidScale("convolution needs a common grid".into()));
    }
    let mut atoms: Vec<(i64, f64)> = Vec::with_capacity(mu.len() * nu.len());
    for &(a, wa) in mu.atoms() {
        for &(b, wb) in nu.atoms() {
            atoms.push((a + b, wa * wb));
        }
    }
    atoms.sort_by_key(|a| a.0);
    let mut merged: Vec<(i64, f64)> = Vec::new();
    for (p, w) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == p => last.1 += w,
            _ => merged.push((p, w)),
        }
    }
    DeltaMeasure1D::new(mu.scale(), merged)
}

/// The image of `mu` under `x -> theta x`, binned into the half-open cells of
/// `target` (ties go right).
pub fn scale_pushforward(
    mu: &DeltaMeasure1D,
    theta: f64,
    target: DyadicScale,
) -> Result<DeltaMeasure1D> {
    if !target.coarser_or_equal(mu.scale()) {
        return Err(Error::InvalidScale("target grid is finer than the source".into()));
    }
    let atoms = mu
        .real_atoms()
        .into_iter()
        .map(|(x, w)| (tube_index(theta * x, target.exponent()), w))
        .collect();
    DeltaMeasure1D::new(target, atoms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionIdentity {
    /// `||(mu_h * theta mu_v) * psi_rho||_2` with `theta = e_y / e_x`.
    pub lhs: f64,
    /// `||pi_e(mu_h x mu_v) * psi_rho||_2`.
    pub rhs: f64,
    pub ratio: f64,
}

/// Compares the two sides of `mu_h * theta mu_v = |(1,theta)|_# pi_e(mu_h x mu_v)`
/// after mollifying both at scale `rho`.
pub fn projection_l2_identity_check(
    mu_h: &DeltaMeasure1D,
    mu_v: &DeltaMeasure1D,
    e: &Direction,
    rho: f64,
) -> Result<ProjectionIdentity> {
    let (c, s) = e.unit();
    if c.abs() < 1e-12 {
        return Err(Error::Precondition("direction is vertical; theta is undefined".into()));
    }
    let theta = s / c;
    let h = mu_h.real_atoms();
    let v = mu_v.real_atoms();
    let mut sum_atoms = Vec::with_capacity(h.len() * v.len());
    let mut proj_atoms = Vec::with_capacity(h.len() * v.len());
    for &(x, wx) in &h {
        for &(y, wy) in &v {
            sum_atoms.push((x + theta * y, wx * wy));
            proj_atoms.push((x * c + y * s, wx * wy));
        }
    }
    let lhs = mollify_atoms(&sum_atoms, rho).l2;
    let rhs = mollify_atoms(&proj_atoms, rho).l2;
    Ok(ProjectionIdentity {
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}
