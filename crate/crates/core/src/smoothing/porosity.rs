use crate::dyadic::{DyadicScale, DyadicSet1D};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PorosityReport {
    pub holds: bool,
    /// Largest `N(E cap B(x,R), r) / (R/r)^D`; the smallest admissible `C_E`.
    pub constant: f64,
    /// `(center numerator, R exponent, r exponent)` of the worst ball.
    pub worst: Option<(i64, u32, u32)>,
    pub worst_ratio: f64,
}

/// Checks `N(E cap B(x,R), r) <= C_E (R/r)^D` over `x` in `E` and the given
/// `(R, r)` pairs, counting dyadic `r`-intervals.
pub fn porosity_check(
    set: &DyadicSet1D,
    d: f64,
    c_e: f64,
    pairs: &[(DyadicScale, DyadicScale)],
) -> Result<PorosityReport> {
    let exp = set.scale().exponent();
    for &(big, small) in pairs {
        if !big.coarser_or_equal(small) || !small.coarser_or_equal(set.scale()) {
            return Err(Error::InvalidScale(format!(
                "pair (2^-{}, 2^-{}) is not ordered above the set scale",
                big.exponent(),
                small.exponent()
            )));
        }
    }
    let pts = set.points();
    let mut report = PorosityReport {
        holds: true,
        constant: 0.0,
        worst: None,
        worst_ratio: 0.0,
    };
    for &(big, small) in pairs {
        let shift = exp - small.exponent();
        // new_cell[i] = 1 if point i starts a new r-interval.
        let mut prefix = vec![0usize; pts.len() + 1];
        for i in 0..pts.len() {
            let fresh = i == 0 || (pts[i] >> shift) != (pts[i - 1] >> shift);
            prefix[i + 1] = prefix[i] + fresh as usize;
        }
        let rad = 1i64 << (exp - big.exponent());
        let scale = 2f64.powf(d * (small.exponent() - big.exponent()) as f64);
        for &x in pts {
            let lo = pts.partition_point(|&p| p <= x - rad);
            let hi = pts.partition_point(|&p| p < x + rad);
            let count = 1 + prefix[hi] - prefix[lo + 1];
            let ratio = count as f64 / scale;
            if ratio > report.constant {
                report.constant = ratio;
                report.worst = Some((x, big.exponent(), small.exponent()));
                report.worst_ratio = ratio;
            }
        }
    }
    report.holds = report.constant <= c_e;
    Ok(report)
}
