use super::pigeon::{band_result, pigeonhole_masses};
use super::{scale, tube_masses};
use crate::dyadic::{tube_index, Direction, GridPointSet, TubeFamily};
use crate::measure::{blowup, Ball, BallIndex, DiscreteMeasure};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Tube masses of the blow-up of `nu` at `B(c, 2^-k)`, computed without
/// materializing the blown-up measure. `center` is on the grid of `nu`.
pub fn ball_tube_masses(
    nu: &DiscreteMeasure,
    index: &BallIndex,
    center: (i64, i64),
    k: u32,
    e: &Direction,
    width_exp: u32,
    d: f64,
) -> Vec<(i64, f64)> {
    let grid = nu.scale().exponent();
    let set = nu.support();
    let unit = 2f64.powi(-(grid as i32 - k as i32));
    let factor = 2f64.powf(k as f64 * d);
    let c_real = set.coords(center);
    let mut acc: BTreeMap<i64, f64> = BTreeMap::new();
    index.for_each_in_ball(c_real, 2f64.powi(-(k as i32)), |i| {
        let (x, y) = set.points()[i];
        let p = ((x - center.0) as f64 * unit, (y - center.1) as f64 * unit);
        *acc.entry(tube_index(e.dot(p), width_exp)).or_insert(0.0) += nu.weights()[i] * factor;
    });
    acc.into_iter().collect()
}

/// Parameters of the bad-ball test at induction step `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BadBallTest {
    pub s_n: f64,
    pub alpha: f64,
    pub tau: f64,
    /// `f(n+1)`.
    pub f_next: f64,
    pub d: f64,
}

/// Witness that a ball blows up to a measure whose mass sits on few heavy tubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadBallCertificate {
    pub ball: Ball,
    pub s_next: f64,
    pub j: i64,
    /// Tubes of width `2^-(k_j - k_i)` in the blown-up coordinates.
    pub tubes: TubeFamily,
    pub masses: Vec<f64>,
    pub mass: f64,
    /// Mass of the blown-up measure in `B_0`.
    pub total: f64,
    /// Exponents `(k_i, k_j)` of `(delta_n^q_i, delta_n^q_j)`.
    pub scale_pair: (u32, u32),
}

impl BadBallCertificate {
    /// Recomputes the blow-up from scratch and re-checks the band condition,
    /// the tube-count lower bound and the drop `s_next <= s_n - alpha`.
    pub fn verify(&self, nu: &DiscreteMeasure, test: &BadBallTest) -> bool {
        let Ok(blown) = blowup(nu, &self.ball, test.d) else {
            return false;
        };
        let width = self.tubes.width.exponent();
        let masses: BTreeMap<i64, f64> =
            tube_masses(&blown, &self.tubes.direction, width).into_iter().collect();
        let lo = 2f64.powi(-self.j as i32);
        let band_ok = self.tubes.indices.iter().all(|i| {
            let m = masses.get(i).copied().unwrap_or(0.0);
            lo * (1.0 - 1e-12) <= m && m <= 2.0 * lo * (1.0 + 1e-12)
        });
        let kp = width as f64;
        let count_ok =
            (self.tubes.len() as f64).log2() >= kp * (self.s_next - test.f_next * test.tau) - 1e-9;
        band_ok && count_ok && self.s_next <= test.s_n - test.alpha + 1e-12 && self.s_next >= 0.0
    }
}

/// Runs the bad-ball test on `ball` (radius `2^-k_i`) against tubes of width
/// `2^-(k_j - k_i)` after blowing up.
pub fn detect_bad_ball(
    nu: &DiscreteMeasure,
    index: &BallIndex,
    ball: &Ball,
    e: &Direction,
    k_j: u32,
    test: &BadBallTest,
) -> Option<BadBallCertificate> {
    let k_i = ball.radius.exponent();
    if k_j <= k_i {
        return None;
    }
    let center = ball.center_at(nu.scale().exponent())?;
    let kp = k_j - k_i;
    let entries = ball_tube_masses(nu, index, center, k_i, e, kp, test.d);
    let c = test.f_next * test.tau;
    let band = pigeonhole_masses(&entries, kp, c).ok()?;
    let pb = band_result(*e, &entries, band, kp, c);
    let count_ok =
        (pb.tubes.len() as f64).log2() >= kp as f64 * (pb.s - test.f_next * test.tau) - 1e-12;
    if !count_ok || pb.j < 0 || pb.s > test.s_n - test.alpha + 1e-12 {
        return None;
    }
    Some(BadBallCertificate {
        ball: *ball,
        s_next: pb.s,
        j: pb.j,
        tubes: pb.tubes,
        masses: pb.masses,
        mass: pb.mass,
        total: pb.total,
        scale_pair: (k_i, k_j),
    })
}

/// Support points of `nu` in `B_0` whose `2^-k_i`-cell carries a bad ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadSet {
    /// Cells `(a, b)` of side `2^-k_i`; the tested ball is centered at the cell center.
    pub cells: Vec<(i64, i64)>,
    pub points: GridPointSet,
    pub mass: f64,
}

/// Tests the ball `B(center of Q, 2^-k_i)` for every `2^-k_i`-cell `Q` meeting
/// `spt nu cap B_0`.
pub fn bad_set(
    nu: &DiscreteMeasure,
    index: &BallIndex,
    e: &Direction,
    (k_i, k_j): (u32, u32),
    test: &BadBallTest,
) -> BadSet {
    let grid = nu.scale().exponent();
    let set = nu.support();
    let shift = grid - k_i;
    let mut cells: BTreeMap<(i64, i64), ()> = BTreeMap::new();
    for &p in set.points() {
        if set.in_unit_ball(p) {
            cells.insert((p.0 >> shift, p.1 >> shift), ());
        }
    }
    let bad: Vec<(i64, i64)> = cells
        .keys()
        .copied()
        .filter(|&(a, b)| {
            let ball = Ball::new((2 * a + 1, 2 * b + 1), k_i + 1, scale(k_i));
            detect_bad_ball(nu, index, &ball, e, k_j, test).is_some()
        })
        .collect();
    let points = set.filter(|p| {
        set.in_unit_ball(p) && bad.binary_search(&(p.0 >> shift, p.1 >> shift)).is_ok()
    });
    let mass = nu.mass_of(&points);
    BadSet {
        cells: bad,
        points,
        mass,
    }
}
