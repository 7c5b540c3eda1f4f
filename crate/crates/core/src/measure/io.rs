use super::DiscreteMeasure;
use crate::dyadic::DyadicScale;
use crate::error::{Error, Result};
use std::io::{BufRead, Write};

/// Writes `x_num,y_num,exp,weight` rows with 17 significant digits.
pub fn write_measure_csv<W: Write>(mu: &DiscreteMeasure, mut out: W) -> Result<()> {
    writeln!(out, "x_num,y_num,exp,weight")?;
    let e = mu.scale().exponent();
    for ((x, y), w) in mu.atoms() {
        writeln!(out, "{x},{y},{e},{w:.16e}")?;
    }
    Ok(())
}

pub fn read_measure_csv<R: BufRead>(input: R) -> Result<DiscreteMeasure> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some("x_num,y_num,exp,weight") {
        return Err(Error::Parse("missing header x_num,y_num,exp,weight".into()));
    }
    let mut exp = None;
    let mut atoms = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let x: i64 = f[0].parse().map_err(|_| bad("x_num"))?;
        let y: i64 = f[1].parse().map_err(|_| bad("y_num"))?;
        let k: u32 = f[2].parse().map_err(|_| bad("exp"))?;
        let w: f64 = f[3].parse().map_err(|_| bad("weight"))?;
        if *exp.get_or_insert(k) != k {
            return Err(bad("mixed exponents"));
        }
        atoms.push(((x, y), w));
    }
    DiscreteMeasure::new(DyadicScale::new(exp.unwrap_or(0))?, atoms)
}
