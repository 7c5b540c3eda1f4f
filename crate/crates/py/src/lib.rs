//! Python bindings. Point sets cross the boundary as lists of integer
//! numerators over a shared grid `2^-exp`; structured results come back as
//! JSON strings.

use assouad_core::dyadic::{assouad_exponent as core_assouad, Direction, DyadicScale, GridPointSet};
use assouad_core::generators::{ifs_attractor, DirectionSet, IfsSystem};
use assouad_core::measure::DiscreteMeasure;
use assouad_core::pipeline::{projection_exponents as core_projections, run_pipeline as core_pipeline, PipelineConfig, SweepScales};
use assouad_core::smoothing::{branching_profile as core_profile, norm_ratio as core_norm_ratio, DeltaMeasure1D};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: assouad_core::Error) -> PyErr {
    match e {
        assouad_core::Error::InvalidArgument(_) | assouad_core::Error::InvalidScale(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn scale(exp: u32) -> PyResult<DyadicScale> {
    DyadicScale::new(exp).map_err(err)
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Support of the four-corner set in `[-1/2, 1/2)^2` at `2^-exp`.
#[pyfunction]
fn four_corner(exp: u32) -> PyResult<Vec<(i64, i64)>> {
    let a = ifs_attractor(&IfsSystem::four_corner_centered(), scale(exp)?, 1 << 24).map_err(err)?;
    Ok(a.set.points().to_vec())
}

/// Finite-scale Assouad exponent of a planar point set.
#[pyfunction]
fn assouad_exponent(points: Vec<(i64, i64)>, exp: u32, radii: Vec<u32>, ratios: Vec<u32>) -> PyResult<f64> {
    let set = GridPointSet::new(scale(exp)?, points);
    let radii = radii.into_iter().map(scale).collect::<PyResult<Vec<_>>>()?;
    Ok(core_assouad(&set, &radii, &ratios).map_err(err)?.exponent)
}

/// Assouad exponents of the projections onto the given angles.
#[pyfunction]
fn projection_exponents(points: Vec<(i64, i64)>, exp: u32, angles: Vec<f64>) -> PyResult<Vec<f64>> {
    let set = GridPointSet::new(scale(exp)?, points);
    let dirs: Vec<Direction> = angles.into_iter().map(Direction::new).collect();
    let ex = core_projections(&set, &dirs, &SweepScales::for_grid(exp)).map_err(err)?;
    Ok(ex.into_iter().map(|x| x.exponent).collect())
}

/// `||mu||_Sh^2 / (Delta ||mu * psi_Delta||_2^2)` for a measure on `2^-exp Z`.
#[pyfunction]
fn norm_ratio(positions: Vec<i64>, weights: Vec<f64>, exp: u32) -> PyResult<f64> {
    if positions.len() != weights.len() {
        return Err(PyValueError::new_err("positions and weights differ in length"));
    }
    let mu = DeltaMeasure1D::normalized(scale(exp)?, positions.into_iter().zip(weights).collect()).map_err(err)?;
    Ok(core_norm_ratio(&mu))
}

/// Branching profile of the counting measure on `positions`, as JSON.
#[pyfunction]
#[pyo3(signature = (positions, exp, m, beta=0.2))]
fn branching_profile(positions: Vec<i64>, exp: u32, m: u32, beta: f64) -> PyResult<String> {
    let mu = DeltaMeasure1D::counting(scale(exp)?, &positions).map_err(err)?;
    json(&core_profile(&mu, m, beta, None).map_err(err)?)
}

/// Runs the pipeline on the normalized counting measure of `points` with
/// `directions` equally spaced angles and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (points, exp, directions, d, big_d, n=3, heavy_c_tau=0.4))]
fn run_pipeline(
    points: Vec<(i64, i64)>,
    exp: u32,
    directions: usize,
    d: f64,
    big_d: f64,
    n: u32,
    heavy_c_tau: f64,
) -> PyResult<String> {
    let set = GridPointSet::new(scale(exp)?, points);
    let mu = DiscreteMeasure::counting(&set).map_err(err)?;
    let mut cfg = PipelineConfig::new(n, exp, d, big_d);
    cfg.heavy_c_tau = heavy_c_tau;
    json(&core_pipeline(&mu, &DirectionSet::uniform(directions), &cfg).map_err(err)?)
}

#[pymodule]
fn assouad_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(four_corner, m)?)?;
    m.add_function(wrap_pyfunction!(assouad_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(projection_exponents, m)?)?;
    m.add_function(wrap_pyfunction!(norm_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(branching_profile, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
