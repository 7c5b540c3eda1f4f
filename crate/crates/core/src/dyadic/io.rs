use super::{DyadicScale, GridPointSet};
use crate::error::{Error, Result};
use std::io::{BufRead, Read, Write};

const MAGIC: &[u8; 4] = b"DYGR";

/// Writes `x_num,y_num,exp` rows.
pub fn write_grid_csv<W: Write>(set: &GridPointSet, mut out: W) -> Result<()> {
    writeln!(out, "x_num,y_num,exp")?;
    let e = set.scale().exponent();
    for &(x, y) in set.points() {
        writeln!(out, "{x},{y},{e}")?;
    }
    Ok(())
}

pub fn read_grid_csv<R: BufRead>(input: R) -> Result<GridPointSet> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some("x_num,y_num,exp") {
        return Err(Error::Parse("missing header x_num,y_num,exp".into()));
    }
    let mut exp = None;
    let mut pts = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 fields", lineno + 2)));
        }
        let parse = |s: &str| {
            s.parse::<i64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
        };
        let (x, y, k) = (parse(f[0])?, parse(f[1])?, parse(f[2])?);
        let k = u32::try_from(k).map_err(|_| Error::Parse("negative exponent".into()))?;
        match exp {
            None => exp = Some(k),
            Some(e) if e != k => return Err(Error::Parse("mixed exponents".into())),
            _ => {}
        }
        pts.push((x, y));
    }
    let scale = DyadicScale::new(exp.unwrap_or(0))?;
    Ok(GridPointSet::new(scale, pts))
}

/// Magic `DYGR`, u32 exponent, u64 count, then `(i64, i64)` pairs, little-endian.
pub fn write_grid_binary<W: Write>(set: &GridPointSet, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&set.scale().exponent().to_le_bytes())?;
    out.write_all(&(set.len() as u64).to_le_bytes())?;
    for &(x, y) in set.points() {
        out.write_all(&x.to_le_bytes())?;
        out.write_all(&y.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid_binary<R: Read>(mut input: R) -> Result<GridPointSet> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let scale = DyadicScale::new(u32::from_le_bytes(b4))?;
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut pts = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        input.read_exact(&mut b8)?;
        let x = i64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let y = i64::from_le_bytes(b8);
        pts.push((x, y));
    }
    Ok(GridPointSet::new(scale, pts))
}
