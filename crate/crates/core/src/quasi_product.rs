//! Heavy squares, the heavy tube `T0`, the grids `D_h x D_v`, the weights
//! `w(x, y)` and their good restriction.
//!
//! Everything is expressed in the frame of a reference direction `e1`: a point
//! `p` has horizontal coordinate `u = p.e1` and vertical coordinate
//! `v = p.e1_perp`. Tubes in direction `e1` are vertical strips in this frame,
//! and a square `(i, j)` of side `2^-a` is `{tube_index(u, a) = i,
//! tube_index(v, a) = j}`, so column `i` lies in the thick tube `i`.

use crate::dyadic::{tube_index, Direction, DyadicScale, GridPointSet, TubeFamily};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::smoothing::DeltaMeasure1D;
use crate::tubes::select_band;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavySquare {
    /// `(u index, v index)` at the square side.
    pub cell: (i64, i64),
    /// `nu(R cap K_e cap K_e1)`.
    pub mass: f64,
    /// `x_R`, a grid point of `nu`.
    pub anchor: (i64, i64),
    /// `nu(B(x_R, side) cap R cap K_e cap K_e1)`.
    pub anchor_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavySquareFamily {
    pub direction: Direction,
    pub side_exp: u32,
    pub threshold: f64,
    pub squares: Vec<HeavySquare>,
    /// Qualifying squares removed because half their mass is bad.
    pub dropped_bad: usize,
}

impl HeavySquareFamily {
    /// Smallest `anchor_mass / mass` over the family.
    pub fn min_anchor_fraction(&self) -> f64 {
        self.squares
            .iter()
            .map(|s| s.anchor_mass / s.mass)
            .fold(f64::INFINITY, f64::min)
    }
}

/// `(u, v)` coordinates of a grid point in the frame of `e1`.
fn frame(set: &GridPointSet, e1: &Direction, p: (i64, i64)) -> (f64, f64) {
    let c = set.coords(p);
    (e1.dot(c), e1.dot_perp(c))
}

fn square_of(set: &GridPointSet, e1: &Direction, p: (i64, i64), a: u32) -> (i64, i64) {
    let (u, v) = frame(set, e1, p);
    (tube_index(u, a), tube_index(v, a))
}

fn dist(set: &GridPointSet, a: (i64, i64), b: (i64, i64)) -> f64 {
    let (x, y) = (set.coords(a), set.coords(b));
    ((x.0 - y.0).powi(2) + (x.1 - y.1).powi(2)).sqrt()
}

/// `K_e cap K_e1 cap B_0` restricted to the support of `nu`.
fn doubly_refined(nu: &DiscreteMeasure, k_e: &GridPointSet, k_e1: &GridPointSet) -> GridPointSet {
    let both = k_e.intersection(k_e1);
    both.filter(|p| both.in_unit_ball(p) && nu.weight_at(p) > 0.0)
}

/// Squares of side `2^-side_exp` with `nu(R cap K_e cap K_e1) >= threshold`,
/// minus those carrying at least half of that mass in `bad`, each with an anchor.
///
/// The anchor is the point of a greedy `side/2`-net of `(R cap K_e cap K_e1) \ bad`
/// (scanned in grid order) whose `side`-ball holds the most mass of the square;
/// ties go to the first net point.
pub fn heavy_squares(
    nu: &DiscreteMeasure,
    k_e: &GridPointSet,
    k_e1: &GridPointSet,
    e1: &Direction,
    side_exp: u32,
    threshold: f64,
    bad: &GridPointSet,
) -> HeavySquareFamily {
    let kk = doubly_refined(nu, k_e, k_e1);
    let mut members: BTreeMap<(i64, i64), Vec<(i64, i64)>> = BTreeMap::new();
    for &p in kk.points() {
        members.entry(square_of(&kk, e1, p, side_exp)).or_default().push(p);
    }
    let side = DyadicScale::new(side_exp).map_or(1.0, |s| s.value());
    let mut squares = Vec::new();
    let mut dropped_bad = 0;
    for (cell, pts) in members {
        let mass: f64 = pts.iter().map(|&p| nu.weight_at(p)).sum();
        if mass < threshold {
            continue;
        }
        let bad_mass: f64 = pts.iter().filter(|&&p| bad.contains(p)).map(|&p| nu.weight_at(p)).sum();
        if bad_mass >= mass / 2.0 {
            dropped_bad += 1;
            continue;
        }
        let mut net: Vec<(i64, i64)> = Vec::new();
        for &p in pts.iter().filter(|&&p| !bad.contains(p)) {
            if net.iter().all(|&x| dist(&kk, x, p) >= side / 2.0) {
                net.push(p);
            }
        }
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for &x in &net {
            let m: f64 = pts
                .iter()
                .filter(|&&p| dist(&kk, x, p) < side)
                .map(|&p| nu.weight_at(p))
                .sum();
            if m > best.1 {
                best = (x, m);
            }
        }
        squares.push(HeavySquare {
            cell,
            mass,
            anchor: best.0,
            anchor_mass: best.1,
        });
    }
    HeavySquareFamily {
        direction: *e1,
        side_exp,
        threshold,
        squares,
        dropped_bad,
    }
}

/// The thick tube `T0` and the heavy squares kept inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyTube {
    pub direction: Direction,
    pub side_exp: u32,
    /// Index of `T0` at width `2^-side_exp`.
    pub t0: i64,
    /// `nu(T0 cap G_p cap K_e cap K_e1)` before truncation.
    pub mass: f64,
    /// `G_T0`, heaviest first up to the cap, then sorted by row.
    pub squares: Vec<HeavySquare>,
    /// `ceil((Delta^p)^(t_th - d))`.
    pub cap: usize,
    pub available: usize,
}

/// Picks the thick tube carrying the most heavy-square mass (ties to the
/// smallest index) and keeps at most `ceil(2^(side_exp (d - t_th)))` of its squares.
pub fn select_heavy_tube(
    family: &HeavySquareFamily,
    thick: &TubeFamily,
    t_th: f64,
    d: f64,
) -> Result<HeavyTube> {
    if thick.width.exponent() != family.side_exp {
        return Err(Error::InvalidScale(format!(
            "thick tubes have width 2^-{}, squares 2^-{}",
            thick.width.exponent(),
            family.side_exp
        )));
    }
    let mut per_tube: BTreeMap<i64, f64> = BTreeMap::new();
    for s in &family.squares {
        if thick.contains_index(s.cell.0) {
            *per_tube.entry(s.cell.0).or_insert(0.0) += s.mass;
        }
    }
    let mut best: Option<(i64, f64)> = None;
    for (&t, &m) in &per_tube {
        if best.map_or(true, |b| m > b.1) {
            best = Some((t, m));
        }
    }
    let Some((t0, mass)) = best else {
        return Err(Error::degenerate("heavy_tube", "no heavy square lies in a thick tube"));
    };
    let mut squares: Vec<HeavySquare> =
        family.squares.iter().filter(|s| s.cell.0 == t0).cloned().collect();
    let available = squares.len();
    let cap = 2f64.powf(family.side_exp as f64 * (d - t_th)).ceil().max(1.0);
    let cap = if cap >= available as f64 { available } else { cap as usize };
    squares.sort_by(|a, b| b.mass.total_cmp(&a.mass).then(a.cell.cmp(&b.cell)));
    squares.truncate(cap);
    squares.sort_by_key(|s| s.cell);
    Ok(HeavyTube {
        direction: family.direction,
        side_exp: family.side_exp,
        t0,
        mass,
        squares,
        cap,
        available,
    })
}

/// `D_v`, `D_h` and the affine map `A(u, v) = (2^side_exp u + a0, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    /// Left endpoints of `pi_2(R)` as numerators over `2^side_exp`.
    pub d_v: Vec<i64>,
    /// Left endpoints of `pi_1(A(T))` as numerators over `2^h_exp`, one per narrow tube.
    pub d_h: Vec<i64>,
    pub side_exp: u32,
    pub h_exp: u32,
    pub a0: i64,
    /// Narrow tube indices (at width `2^-(side_exp + h_exp)`), parallel to `d_h`.
    pub narrow: Vec<i64>,
}

impl Grids {
    pub fn affine(&self, (u, v): (f64, f64)) -> (f64, f64) {
        (u * 2f64.powi(self.side_exp as i32) + self.a0 as f64, v)
    }
}

/// Reads the grids off `T0`, its squares and the narrow tubes inside it.
pub fn extract_grids(tube: &HeavyTube, narrow: &TubeFamily) -> Result<Grids> {
    let a_p = tube.side_exp;
    let a_q = narrow.width.exponent();
    if a_q < a_p {
        return Err(Error::InvalidScale(format!(
            "narrow tubes 2^-{a_q} are wider than the thick tube 2^-{a_p}"
        )));
    }
    let h_exp = a_q - a_p;
    let inside: Vec<i64> =
        narrow.indices.iter().copied().filter(|&n| n >> h_exp == tube.t0).collect();
    if inside.is_empty() {
        return Err(Error::degenerate("grids", "no narrow tube lies in T0"));
    }
    let base = tube.t0 << h_exp;
    Ok(Grids {
        d_v: tube.squares.iter().map(|s| s.cell.1).collect(),
        d_h: inside.iter().map(|n| n - base).collect(),
        side_exp: a_p,
        h_exp,
        a0: -tube.t0,
        narrow: inside,
    })
}

/// One row of the band selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowBand {
    pub row: usize,
    /// `2^-j <= w <= 2^(-j+1)` on `D_h^y`.
    pub j: i64,
    /// Columns of `D_h^y`.
    pub members: Vec<usize>,
    pub row_mass: f64,
    pub retained: f64,
    /// `row_mass / (2 max(1, ceil(log2 (max w / min w))))`.
    pub guaranteed: f64,
    /// Whether the row band is the common band, so the row enters `G`.
    pub in_g: bool,
}

/// `nu_G` and the exponent `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodRestriction {
    pub rows: Vec<RowBand>,
    /// The common band: `Delta^(p eta) = 2^-j`.
    pub j: i64,
    pub eta: f64,
    /// `d - 4 alpha / q1`.
    pub eta_benchmark: f64,
    pub eta_holds: bool,
    /// `(column, row)` pairs of `G`, sorted.
    pub support: Vec<(usize, usize)>,
    /// Every row keeps at least its guaranteed share.
    pub rows_meet_guarantee: bool,
    /// Every row of `G` keeps half of its mass.
    pub rows_keep_half: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityDiagnostics {
    pub mass: f64,
    pub sup_density: f64,
    pub product_mass_of_support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiProduct {
    pub direction: Direction,
    pub t0: i64,
    pub grids: Grids,
    /// Anchors `x_R` per row, as grid points of `nu`.
    pub anchors: Vec<(i64, i64)>,
    pub t_th: f64,
    /// `weights[row][col] = w(x_col, y_row)`.
    pub weights: Vec<Vec<f64>>,
    /// `nu(R_y cap K_e cap K_e1 cap B(x_R, Delta^p)) / (Delta^p)^t_th`, evaluated directly.
    pub row_direct: Vec<f64>,
    pub row_sum_max_rel_error: f64,
    pub row_sum_holds: bool,
    pub good: Option<GoodRestriction>,
}

impl QuasiProduct {
    pub fn mu_h(&self) -> Result<DeltaMeasure1D> {
        DeltaMeasure1D::counting(DyadicScale::new(self.grids.h_exp)?, &self.grids.d_h)
    }

    pub fn mu_v(&self) -> Result<DeltaMeasure1D> {
        DeltaMeasure1D::counting(DyadicScale::new(self.grids.side_exp)?, &self.grids.d_v)
    }

    /// `nu_G(x, y)`, zero off `G` or before `restrict_good`.
    pub fn nu_g(&self, col: usize, row: usize) -> f64 {
        match &self.good {
            Some(g) if g.support.binary_search(&(col, row)).is_ok() => self.weights[row][col],
            _ => 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("quasi-product serializes")
    }
}

/// Fills `w(x, y) = nu([R_y cap K_e cap K_e1 cap B(x_R, Delta^p)] cap T_x) / (Delta^p)^t_th`
/// and checks each row sum against a direct evaluation of the anchored region.
pub fn build_nu_prime(
    nu: &DiscreteMeasure,
    k_e: &GridPointSet,
    k_e1: &GridPointSet,
    tube: &HeavyTube,
    grids: &Grids,
    t_th: f64,
) -> QuasiProduct {
    let kk = doubly_refined(nu, k_e, k_e1);
    let e1 = tube.direction;
    let a_p = grids.side_exp;
    let a_q = a_p + grids.h_exp;
    let side = 2f64.powi(-(a_p as i32));
    let norm = 2f64.powf(a_p as f64 * t_th);
    let col_of: BTreeMap<i64, usize> = grids.narrow.iter().enumerate().map(|(c, &n)| (n, c)).collect();
    let index = nu.index();
    let support = nu.support();

    let mut weights = Vec::with_capacity(tube.squares.len());
    let mut row_direct = Vec::with_capacity(tube.squares.len());
    for sq in &tube.squares {
        let mut row = vec![0.0; grids.d_h.len()];
        let mut direct = 0.0;
        let centre = support.coords(sq.anchor);
        index.for_each_in_ball(centre, side, |i| {
            let p = support.points()[i];
            if !kk.contains(p) || square_of(support, &e1, p, a_p) != sq.cell {
                return;
            }
            let w = nu.weights()[i];
            direct += w;
            let (u, _) = frame(support, &e1, p);
            if let Some(&c) = col_of.get(&tube_index(u, a_q)) {
                row[c] += w;
            }
        });
        for w in &mut row {
            *w *= norm;
        }
        weights.push(row);
        row_direct.push(direct * norm);
    }
    let row_sum_max_rel_error = weights
        .iter()
        .zip(&row_direct)
        .map(|(row, &d)| {
            let s: f64 = row.iter().sum();
            if d == 0.0 {
                s.abs()
            } else {
                (s - d).abs() / d
            }
        })
        .fold(0.0, f64::max);
    QuasiProduct {
        direction: e1,
        t0: tube.t0,
        grids: grids.clone(),
        anchors: tube.squares.iter().map(|s| s.anchor).collect(),
        t_th,
        weights,
        row_direct,
        row_sum_max_rel_error,
        row_sum_holds: row_sum_max_rel_error <= 1e-9,
        good: None,
    }
}

/// Per row, keeps the dyadic weight band of most mass; then keeps the rows
/// whose band is the one retaining the most mass over all rows.
pub fn restrict_good(qp: &QuasiProduct, d: f64, alpha: f64, q1: f64) -> Result<GoodRestriction> {
    let mut rows = Vec::new();
    for (r, w) in qp.weights.iter().enumerate() {
        let Some(band) = select_band(w, None) else { continue };
        let row_mass: f64 = w.iter().sum();
        let positive = w.iter().copied().filter(|&x| x > 0.0);
        let (lo, hi) = positive.fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
        let bands = (hi / lo).log2().ceil().max(1.0);
        rows.push(RowBand {
            row: r,
            j: band.j,
            members: band.members,
            row_mass,
            retained: band.mass,
            guaranteed: row_mass / (2.0 * bands),
            in_g: false,
        });
    }
    let mut by_band: BTreeMap<i64, f64> = BTreeMap::new();
    for rb in &rows {
        *by_band.entry(rb.j).or_insert(0.0) += rb.retained;
    }
    let mut best: Option<(i64, f64)> = None;
    for (&j, &m) in &by_band {
        if best.map_or(true, |b| m > b.1) {
            best = Some((j, m));
        }
    }
    let Some((j, _)) = best else {
        return Err(Error::degenerate("restrict_good", "every row of w is empty"));
    };
    let mut support = Vec::new();
    for rb in &mut rows {
        rb.in_g = rb.j == j;
        if rb.in_g {
            support.extend(rb.members.iter().map(|&c| (c, rb.row)));
        }
    }
    support.sort_unstable();
    let a_p = qp.grids.side_exp.max(1) as f64;
    let eta = j as f64 / a_p;
    let eta_benchmark = d - 4.0 * alpha / q1;
    Ok(GoodRestriction {
        rows_meet_guarantee: rows.iter().all(|r| r.retained >= r.guaranteed * (1.0 - 1e-12)),
        rows_keep_half: rows.iter().filter(|r| r.in_g).all(|r| r.retained >= r.row_mass / 2.0),
        rows,
        j,
        eta,
        eta_benchmark,
        eta_holds: eta >= eta_benchmark,
        support,
    })
}

/// Total mass of `nu_G`, the largest density `w |D_h| |D_v|` on `G`, and
/// `(mu_h x mu_v)(G)`.
pub fn density_diagnostics(qp: &QuasiProduct) -> Result<DensityDiagnostics> {
    let good = qp
        .good
        .as_ref()
        .ok_or_else(|| Error::Dependency("density diagnostics need restrict_good".into()))?;
    let cells = (qp.grids.d_h.len() * qp.grids.d_v.len()) as f64;
    let mut mass = 0.0;
    let mut sup: f64 = 0.0;
    for &(c, r) in &good.support {
        let w = qp.weights[r][c];
        mass += w;
        sup = sup.max(w * cells);
    }
    Ok(DensityDiagnostics {
        mass,
        sup_density: sup,
        product_mass_of_support: good.support.len() as f64 / cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(k: u32) -> DyadicScale {
        DyadicScale::new(k).unwrap()
    }

    fn e1() -> Direction {
        Direction::new(0.0)
    }

    fn empty(k: u32) -> GridPointSet {
        GridPointSet::empty(s(k))
    }

    #[test]
    fn uniform_square_is_one_heavy_square() {
        // The 16 x 16 grid filling [0, 1/4)^2 at step 2^-6.
        let pts: Vec<(i64, i64)> = (0..16).flat_map(|x| (0..16).map(move |y| (x, y))).collect();
        let set = GridPointSet::new(s(6), pts);
        let nu = DiscreteMeasure::counting(&set).unwrap().normalized().unwrap();
        let fam = heavy_squares(&nu, &set, &set, &e1(), 2, 0.5, &empty(6));
        assert_eq!(fam.squares.len(), 1);
        let sq = &fam.squares[0];
        assert_eq!(sq.cell, (0, 0));
        assert!((sq.mass - 1.0).abs() < 1e-12);
        // Greedy 1/8-net in grid order, then the net point with the heaviest 1/4-ball.
        let mut net: Vec<(i64, i64)> = Vec::new();
        for &p in set.points() {
            if net.iter().all(|&x| dist(&set, x, p) >= 0.125) {
                net.push(p);
            }
        }
        let ball = |x: (i64, i64)| -> f64 {
            set.points()
                .iter()
                .filter(|&&p| dist(&set, x, p) < 0.25)
                .map(|&p| nu.weight_at(p))
                .sum()
        };
        let best = net.iter().copied().fold((net[0], ball(net[0])), |b, x| {
            if ball(x) > b.1 {
                (x, ball(x))
            } else {
                b
            }
        });
        assert_eq!(sq.anchor, best.0);
        assert_eq!(sq.anchor_mass, best.1);

        let none = heavy_squares(&nu, &set, &set, &e1(), 2, 1.5, &empty(6));
        assert!(none.squares.is_empty());
    }

    #[test]
    fn bad_half_drops_square() {
        let set = GridPointSet::new(s(4), vec![(0, 0), (1, 0), (8, 8)]);
        let nu = DiscreteMeasure::counting(&set).unwrap();
        let bad = GridPointSet::new(s(4), vec![(1, 0)]);
        let fam = heavy_squares(&nu, &set, &set, &e1(), 1, 0.3, &bad);
        // Square (0, 0) holds 2 atoms, one bad: exactly half, so it goes.
        assert_eq!(fam.squares.iter().map(|q| q.cell).collect::<Vec<_>>(), vec![(1, 1)]);
        assert_eq!(fam.dropped_bad, 1);
    }

    #[test]
    fn random_families_match_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<(i64, i64)> =
                (0..120).map(|_| (rng.gen_range(-20..20), rng.gen_range(-20..20))).collect();
            let set = GridPointSet::new(s(5), pts);
            let atoms: Vec<((i64, i64), f64)> =
                set.points().iter().map(|&p| (p, rng.gen_range(0.1..1.0))).collect();
            let nu = DiscreteMeasure::new(s(5), atoms).unwrap().normalized().unwrap();
            let k_e = set.filter(|_| rng.gen_bool(0.8));
            let k_e1 = set.filter(|_| rng.gen_bool(0.8));
            let bad = set.filter(|_| rng.gen_bool(0.2));
            let side = rng.gen_range(1..4);
            let threshold = rng.gen_range(0.0..0.1);
            let fam = heavy_squares(&nu, &k_e, &k_e1, &e1(), side, threshold, &bad);

            // Oracle: every square of side 2^-side in [-1, 1)^2, masses by direct filtering.
            let n = 1i64 << side;
            let mut expect = Vec::new();
            for i in -n..n {
                for j in -n..n {
                    let inside = |p: (i64, i64)| {
                        let (x, y) = set.coords(p);
                        x * x + y * y < 1.0
                            && (x * n as f64).floor() as i64 == i
                            && (y * n as f64).floor() as i64 == j
                            && k_e.contains(p)
                            && k_e1.contains(p)
                    };
                    let m: f64 = nu.atoms().filter(|(p, _)| inside(*p)).map(|a| a.1).sum();
                    let b: f64 =
                        nu.atoms().filter(|(p, _)| inside(*p) && bad.contains(*p)).map(|a| a.1).sum();
                    if m > 0.0 && m >= threshold && b < m / 2.0 {
                        expect.push(((i, j), m));
                    }
                }
            }
            assert_eq!(fam.squares.len(), expect.len());
            for (sq, (cell, m)) in fam.squares.iter().zip(&expect) {
                assert_eq!(sq.cell, *cell);
                assert!((sq.mass - m).abs() < 1e-12);
                assert!(!bad.contains(sq.anchor));
                assert_eq!(square_of(&set, &e1(), sq.anchor, side), sq.cell);
                assert!(sq.mass >= threshold);
            }
        }
    }

    fn family(squares: &[((i64, i64), f64)], side_exp: u32) -> HeavySquareFamily {
        HeavySquareFamily {
            direction: e1(),
            side_exp,
            threshold: 0.0,
            squares: squares
                .iter()
                .map(|&(cell, mass)| HeavySquare {
                    cell,
                    mass,
                    anchor: (0, 0),
                    anchor_mass: mass,
                })
                .collect(),
            dropped_bad: 0,
        }
    }

    #[test]
    fn heavy_tube_is_the_heaviest_column() {
        let thick = TubeFamily::new(e1(), s(2), (-4..4).collect());
        let one = family(&[((1, 0), 0.2), ((1, 2), 0.3)], 2);
        assert_eq!(select_heavy_tube(&one, &thick, 1.0, 1.0).unwrap().t0, 1);
        let two = family(&[((-2, 0), 0.2), ((3, 1), 0.1), ((-2, 1), 0.2), ((3, 0), 0.1)], 2);
        let t = select_heavy_tube(&two, &thick, 1.0, 2.0).unwrap();
        assert_eq!(t.t0, -2);
        assert!((t.mass - 0.4).abs() < 1e-15);
        // Cap 2^(2 (2 - 1)) = 4 keeps both squares.
        assert_eq!(t.squares.len(), 2);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let sq: Vec<((i64, i64), f64)> = (0..15)
                .map(|_| ((rng.gen_range(-4..4), rng.gen_range(-4..4)), rng.gen_range(0.0..1.0)))
                .collect();
            let mut sq = sq;
            sq.sort_by_key(|x| x.0);
            sq.dedup_by_key(|x| x.0);
            let fam = family(&sq, 2);
            let t = select_heavy_tube(&fam, &thick, 0.5, 1.0).unwrap();
            let col = |i: i64| -> f64 { sq.iter().filter(|x| x.0 .0 == i).map(|x| x.1).sum() };
            for i in -4..4 {
                assert!(col(i) <= col(t.t0));
            }
            // Cap ceil(2^(2 * 0.5)) = 2 heaviest squares.
            let mut masses: Vec<f64> = sq.iter().filter(|x| x.0 .0 == t.t0).map(|x| x.1).collect();
            masses.sort_by(|a, b| b.total_cmp(a));
            let kept: f64 = t.squares.iter().map(|q| q.mass).sum();
            let top: f64 = masses.iter().take(2).sum();
            assert!((kept - top).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_family_has_no_heavy_tube() {
        let thick = TubeFamily::new(e1(), s(2), vec![0]);
        assert!(select_heavy_tube(&family(&[], 2), &thick, 1.0, 1.0).is_err());
    }

    #[test]
    fn grids_from_squares_and_narrow_tubes() {
        let thick = TubeFamily::new(e1(), s(2), vec![1]);
        let t = select_heavy_tube(&family(&[((1, -3), 0.5)], 2), &thick, 0.0, 0.0).unwrap();
        let g = extract_grids(&t, &TubeFamily::new(e1(), s(4), vec![5])).unwrap();
        assert_eq!((g.d_v.clone(), g.d_h.clone()), (vec![-3], vec![1]));
        // A maps [1/4, 1/2) onto [0, 1).
        assert_eq!(g.affine((0.25, 0.0)).0, 0.0);
        assert_eq!(g.affine((0.5, 0.0)).0, 1.0);

        let rows: Vec<((i64, i64), f64)> = (0..5).map(|j| ((1, j - 2), 0.1)).collect();
        let t = select_heavy_tube(&family(&rows, 2), &thick, 0.0, 10.0).unwrap();
        let narrow = TubeFamily::new(e1(), s(4), vec![3, 4, 6, 7, 8]);
        let g = extract_grids(&t, &narrow).unwrap();
        assert_eq!(g.d_v, vec![-2, -1, 0, 1, 2]);
        assert_eq!(g.d_h, vec![0, 2, 3]);
        assert!(extract_grids(&t, &TubeFamily::new(e1(), s(1), vec![0])).is_err());
    }

    /// Two columns of points inside the thick tube [0, 1/4) at step 2^-6.
    fn two_column_setup() -> (DiscreteMeasure, HeavyTube, Grids) {
        let mut atoms = Vec::new();
        for y in 0..16 {
            atoms.push(((4, y), 1.0));
            atoms.push(((9, y), 3.0));
        }
        let nu = DiscreteMeasure::new(s(6), atoms).unwrap().normalized().unwrap();
        let set = nu.support().clone();
        let fam = heavy_squares(&nu, &set, &set, &e1(), 2, 0.0, &empty(6));
        let thick = TubeFamily::new(e1(), s(2), vec![0]);
        let tube = select_heavy_tube(&fam, &thick, 1.0, 1.0).unwrap();
        let narrow = TubeFamily::new(e1(), s(4), vec![1, 2]);
        let grids = extract_grids(&tube, &narrow).unwrap();
        (nu, tube, grids)
    }

    #[test]
    fn weights_follow_the_narrow_tubes() {
        let (nu, tube, grids) = two_column_setup();
        let set = nu.support().clone();
        let qp = build_nu_prime(&nu, &set, &set, &tube, &grids, 1.0);
        assert_eq!(qp.weights.len(), 1);
        assert!(qp.row_sum_holds, "{}", qp.row_sum_max_rel_error);
        // Brute-force weights straight from the formula.
        let anchor = set.coords(tube.squares[0].anchor);
        for (c, &n) in grids.narrow.iter().enumerate() {
            let m: f64 = nu
                .atoms()
                .filter(|(p, _)| {
                    let x = set.coords(*p);
                    let r = ((x.0 - anchor.0).powi(2) + (x.1 - anchor.1).powi(2)).sqrt();
                    r < 0.25 && (x.0 * 16.0).floor() as i64 == n
                })
                .map(|a| a.1)
                .sum();
            assert!((qp.weights[0][c] - m * 4.0).abs() < 1e-12);
        }
        assert!(qp.weights[0][0] > 0.0 && qp.weights[0][1] > 0.0);
    }

    #[test]
    fn massless_row_has_zero_weights() {
        let (nu, mut tube, _) = two_column_setup();
        tube.squares.push(HeavySquare {
            cell: (0, -2),
            mass: 0.0,
            anchor: (2, -30),
            anchor_mass: 0.0,
        });
        let narrow = TubeFamily::new(e1(), s(4), vec![1, 2]);
        let grids = extract_grids(&tube, &narrow).unwrap();
        let set = nu.support().clone();
        let qp = build_nu_prime(&nu, &set, &set, &tube, &grids, 1.0);
        assert_eq!(qp.weights[1], vec![0.0, 0.0]);
        assert!(qp.row_sum_holds);
    }

    fn manual(weights: Vec<Vec<f64>>) -> QuasiProduct {
        let rows = weights.len();
        let cols = weights[0].len();
        QuasiProduct {
            direction: e1(),
            t0: 0,
            grids: Grids {
                d_v: (0..rows as i64).collect(),
                d_h: (0..cols as i64).collect(),
                side_exp: 4,
                h_exp: 4,
                a0: 0,
                narrow: (0..cols as i64).collect(),
            },
            anchors: vec![(0, 0); rows],
            t_th: 1.0,
            row_direct: weights.iter().map(|r| r.iter().sum()).collect(),
            weights,
            row_sum_max_rel_error: 0.0,
            row_sum_holds: true,
            good: None,
        }
    }

    #[test]
    fn equal_weights_keep_everything() {
        let mut qp = manual(vec![vec![1.0 / 16.0; 4]; 4]);
        let g = restrict_good(&qp, 1.0, 0.1, 0.5).unwrap();
        assert_eq!(g.support.len(), 16);
        // 1/16 sits in bands 4 and 5; ties go to 4.
        assert_eq!(g.j, 4);
        assert_eq!(g.eta, 1.0);
        qp.good = Some(g);
        let dd = density_diagnostics(&qp).unwrap();
        assert!((dd.mass - 1.0).abs() < 1e-15);
        assert!((dd.sup_density - 1.0).abs() < 1e-15);
        assert_eq!(dd.product_mass_of_support, 1.0);
    }

    #[test]
    fn half_zeroed_pairs_halve_the_support() {
        let w = vec![vec![0.125, 0.0, 0.125, 0.0]; 4];
        let mut qp = manual(w);
        qp.good = Some(restrict_good(&qp, 1.0, 0.1, 0.5).unwrap());
        let dd = density_diagnostics(&qp).unwrap();
        assert_eq!(dd.product_mass_of_support, 0.5);
        assert!((dd.sup_density - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_band_rows_pick_the_heavier_band() {
        let row = vec![0.3, 0.3, 0.3, 0.05, 0.05];
        let qp = manual(vec![row.clone(); 2]);
        let g = restrict_good(&qp, 1.0, 0.1, 0.5).unwrap();
        // Brute force over closed bands.
        let mut best = (0.0, 0i64);
        for j in -5..20 {
            let lo = 2f64.powi(-j);
            let m: f64 = row.iter().filter(|&&w| lo <= w && w <= 2.0 * lo).sum();
            if m > best.0 {
                best = (m, j as i64);
            }
        }
        assert_eq!(g.j, best.1);
        assert_eq!(g.rows[0].members, vec![0, 1, 2]);
        assert!(g.rows_meet_guarantee && g.rows_keep_half);
        assert!(restrict_good(&manual(vec![vec![0.0; 3]]), 1.0, 0.1, 0.5).is_err());
    }

    #[test]
    fn random_diagnostics_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let rows = rng.gen_range(1..6);
            let cols = rng.gen_range(1..6);
            let w: Vec<Vec<f64>> = (0..rows)
                .map(|_| {
                    (0..cols)
                        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.01..1.0) })
                        .collect()
                })
                .collect();
            let mut qp = manual(w.clone());
            let Ok(g) = restrict_good(&qp, 1.0, 0.1, 0.5) else {
                assert!(w.iter().flatten().all(|&x| x == 0.0));
                continue;
            };
            let mut mass = 0.0;
            let mut sup: f64 = 0.0;
            let mut count = 0;
            for r in 0..rows {
                for c in 0..cols {
                    let in_g = g.support.contains(&(c, r));
                    if in_g {
                        assert!(w[r][c] > 0.0);
                        let lo = 2f64.powi(-g.j as i32);
                        assert!(lo <= w[r][c] && w[r][c] <= 2.0 * lo);
                        mass += w[r][c];
                        sup = sup.max(w[r][c] * (rows * cols) as f64);
                        count += 1;
                    }
                }
            }
            assert!(g.rows_meet_guarantee);
            qp.good = Some(g);
            let dd = density_diagnostics(&qp).unwrap();
            assert!((dd.mass - mass).abs() < 1e-12);
            assert!((dd.sup_density - sup).abs() < 1e-12);
            assert_eq!(dd.product_mass_of_support, count as f64 / (rows * cols) as f64);
            for r in 0..rows {
                for c in 0..cols {
                    assert!(qp.nu_g(c, r) <= w[r][c]);
                }
            }
        }
    }
}
