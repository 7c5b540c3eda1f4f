use super::{shmerkin_norm, DeltaMeasure1D};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchingClass {
    Uniform,
    Singular,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingProfile {
    pub m: u32,
    pub beta: f64,
    /// `R[s]` children per surviving `2^(-ms)` interval, `s = 0..l`.
    #[serde(rename = "R")]
    pub r: Vec<u64>,
    pub classes: Vec<BranchingClass>,
    #[serde(rename = "S_size")]
    pub s_size: usize,
    /// Positions (on the measure's grid) of the extracted subset.
    pub regular_subset: Vec<i64>,
    /// Mass of the measure carried by the extracted subset.
    pub retained_mass: f64,
    pub branching_bound_lhs: Option<f64>,
    pub branching_bound_rhs: Option<f64>,
    pub branching_bound_holds: Option<bool>,
}

/// Multiscale branching numbers of `mu` in base `2^m`.
///
/// The subset is extracted from the finest level upward: at each level the
/// branching count `R` is the one that keeps the most mass when every parent
/// with at least `R` surviving children keeps its `R` heaviest and the rest
/// are dropped. Pruning a parent removes whole subtrees, so the counts fixed
/// at finer levels stay exact.
///
/// With a `companion` measure the inequality
/// `m |S| >= log2 ||companion||_Sh^-2 + beta log2 Delta` is evaluated.
pub fn branching_profile(
    mu: &DeltaMeasure1D,
    m: u32,
    beta: f64,
    companion: Option<&DeltaMeasure1D>,
) -> Result<BranchingProfile> {
    let exp = mu.scale().exponent();
    if m == 0 || exp == 0 || exp % m != 0 {
        return Err(Error::InvalidScale(format!(
            "grid 2^-{exp} is not of the form 2^-(l m) with m = {m}"
        )));
    }
    if m > 20 {
        return Err(Error::InvalidArgument(format!("block size {m} is too large")));
    }
    let levels = (exp / m) as usize;

    // Surviving nodes at the current level: position prefix -> (mass, leaves).
    let mut nodes: BTreeMap<i64, (f64, Vec<i64>)> =
        mu.atoms().iter().map(|&(p, w)| (p, (w, vec![p]))).collect();
    let mut r = vec![0u64; levels];
    for s in (0..levels).rev() {
        let mut parents: BTreeMap<i64, Vec<(f64, i64)>> = BTreeMap::new();
        for (&key, (w, _)) in &nodes {
            parents.entry(key >> m).or_default().push((*w, key));
        }
        for kids in parents.values_mut() {
            // Heaviest first; ties keep the leftmost.
            kids.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        }
        let max_kids = parents.values().map(Vec::len).max().unwrap_or(0);
        let mut best = (f64::NEG_INFINITY, 1usize);
        for cand in 1..=max_kids {
            let kept: f64 = parents
                .values()
                .filter(|k| k.len() >= cand)
                .map(|k| k[..cand].iter().map(|c| c.0).sum::<f64>())
                .sum();
            if kept > best.0 {
                best = (kept, cand);
            }
        }
        let rs = best.1;
        r[s] = rs as u64;
        let mut next = BTreeMap::new();
        for (parent, kids) in parents {
            if kids.len() < rs {
                continue;
            }
            let mut mass = 0.0;
            let mut leaves = Vec::new();
            for &(w, key) in &kids[..rs] {
                mass += w;
                leaves.extend(nodes.remove(&key).map(|n| n.1).unwrap_or_default());
            }
            next.insert(parent, (mass, leaves));
        }
        nodes = next;
    }
    let mut regular_subset: Vec<i64> = nodes.values().flat_map(|n| n.1.iter().copied()).collect();
    regular_subset.sort_unstable();
    let retained_mass = nodes.values().map(|n| n.0).sum();

    let uniform_floor = 2f64.powf((1.0 - beta) * m as f64);
    let classes: Vec<BranchingClass> = r
        .iter()
        .map(|&rs| {
            if rs as f64 >= uniform_floor {
                BranchingClass::Uniform
            } else if rs == 1 {
                BranchingClass::Singular
            } else {
                BranchingClass::Mixed
            }
        })
        .collect();
    let s_size = classes.iter().filter(|c| **c == BranchingClass::Uniform).count();
    let (lhs, rhs, holds) = match companion {
        Some(nu) => {
            let lhs = (m as usize * s_size) as f64;
            let rhs = -2.0 * shmerkin_norm(nu).log2() - beta * exp as f64;
            (Some(lhs), Some(rhs), Some(lhs >= rhs))
        }
        None => (None, None, None),
    };
    Ok(BranchingProfile {
        m,
        beta,
        r,
        classes,
        s_size,
        regular_subset,
        retained_mass,
        branching_bound_lhs: lhs,
        branching_bound_rhs: rhs,
        branching_bound_holds: holds,
    })
}
