use crate::dyadic::{pow2, DyadicScale};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// A probability measure on the grid `2^-exp Z`, atoms sorted by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMeasure1D {
    scale: DyadicScale,
    atoms: Vec<(i64, f64)>,
}

impl DeltaMeasure1D {
    /// Merges repeated positions and drops zero weights; the total must be 1 within 1e-9.
    pub fn new(scale: DyadicScale, atoms: Vec<(i64, f64)>) -> Result<Self> {
        let m = Self::unnormalized(scale, atoms)?;
        let total = m.mass();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "total mass {total} is not 1"
            )));
        }
        Ok(m)
    }

    /// Same as [`DeltaMeasure1D::new`] but rescales to total mass 1.
    pub fn normalized(scale: DyadicScale, atoms: Vec<(i64, f64)>) -> Result<Self> {
        let m = Self::unnormalized(scale, atoms)?;
        let total = m.mass();
        if total <= 0.0 {
            return Err(Error::degenerate("normalize", "zero mass"));
        }
        Ok(Self {
            scale,
            atoms: m.atoms.into_iter().map(|(p, w)| (p, w / total)).collect(),
        })
    }

    /// Normalized counting measure on `positions`.
    pub fn counting(scale: DyadicScale, positions: &[i64]) -> Result<Self> {
        Self::normalized(scale, positions.iter().map(|&p| (p, 1.0)).collect())
    }

    fn unnormalized(scale: DyadicScale, atoms: Vec<(i64, f64)>) -> Result<Self> {
        let mut map: BTreeMap<i64, f64> = BTreeMap::new();
        for (p, w) in atoms {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("bad weight {w} at {p}")));
            }
            *map.entry(p).or_insert(0.0) += w;
        }
        Ok(Self {
            scale,
            atoms: map.into_iter().filter(|(_, w)| *w > 0.0).collect(),
        })
    }

    pub fn point_mass(scale: DyadicScale, position: i64) -> Self {
        Self {
            scale,
            atoms: vec![(position, 1.0)],
        }
    }

    pub fn scale(&self) -> DyadicScale {
        self.scale
    }

    pub fn atoms(&self) -> &[(i64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn positions(&self) -> Vec<i64> {
        self.atoms.iter().map(|a| a.0).collect()
    }

    pub fn real_atoms(&self) -> Vec<(f64, f64)> {
        let s = pow2(-(self.scale.exponent() as i32));
        self.atoms.iter().map(|&(p, w)| (p as f64 * s, w)).collect()
    }

    pub fn in_unit_interval(&self) -> bool {
        let n = 1i64 << self.scale.exponent();
        self.atoms.iter().all(|&(p, _)| p >= -n && p < n)
    }

    /// Re-expresses the measure on a finer grid without moving atoms.
    pub fn refine(&self, scale: DyadicScale) -> Result<Self> {
        if !self.scale.coarser_or_equal(scale) {
            return Err(Error::InvalidScale("refine needs a finer target".into()));
        }
        let k = scale.exponent() - self.scale.exponent();
        Ok(Self {
            scale,
            atoms: self.atoms.iter().map(|&(p, w)| (p << k, w)).collect(),
        })
    }

    /// Writes `pos_num,exp,weight` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "pos_num,exp,weight")?;
        let e = self.scale.exponent();
        for &(p, w) in &self.atoms {
            writeln!(out, "{p},{e},{w:.16e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim) != Some("pos_num,exp,weight") {
            return Err(Error::Parse("missing header pos_num,exp,weight".into()));
        }
        let mut exp = None;
        let mut atoms = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("bad row `{line}`")));
            }
            let bad = |_| Error::Parse(format!("bad row `{line}`"));
            let p: i64 = f[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            let k: u32 = f[1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            let w: f64 = f[2].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            if *exp.get_or_insert(k) != k {
                return Err(Error::Parse("mixed exponents".into()));
            }
            atoms.push((p, w));
        }
        Self::new(DyadicScale::new(exp.unwrap_or(0))?, atoms)
    }
}
