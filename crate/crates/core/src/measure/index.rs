use crate::dyadic::GridPointSet;

/// Row-bucketed lookup of grid points inside open Euclidean balls.
#[derive(Debug, Clone)]
pub struct BallIndex {
    exp: u32,
    row_y: Vec<i64>,
    row_start: Vec<usize>,
    xs: Vec<i64>,
    ids: Vec<usize>,
}

impl BallIndex {
    pub fn new(set: &GridPointSet) -> Self {
        let mut by_row: Vec<(i64, i64, usize)> = set
            .points()
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (y, x, i))
            .collect();
        by_row.sort_unstable();
        let mut row_y = Vec::new();
        let mut row_start = Vec::new();
        let mut xs = Vec::with_capacity(by_row.len());
        let mut ids = Vec::with_capacity(by_row.len());
        for (k, &(y, x, i)) in by_row.iter().enumerate() {
            if row_y.last() != Some(&y) {
                row_y.push(y);
                row_start.push(k);
            }
            xs.push(x);
            ids.push(i);
        }
        row_start.push(by_row.len());
        Self {
            exp: set.scale().exponent(),
            row_y,
            row_start,
            xs,
            ids,
        }
    }

    /// Calls `f` with the index (into the original set) of every point `p`
    /// with `|p - center| < radius`, in real coordinates.
    pub fn for_each_in_ball(&self, center: (f64, f64), radius: f64, mut f: impl FnMut(usize)) {
        let unit = f64::powi(2.0, self.exp as i32);
        let (cx, cy) = (center.0 * unit, center.1 * unit);
        let rad = radius * unit;
        let rad2 = rad * rad;
        let lo_y = (cy - rad).floor() as i64;
        let hi_y = (cy + rad).ceil() as i64;
        let first = self.row_y.partition_point(|&y| y < lo_y);
        for r in first..self.row_y.len() {
            let y = self.row_y[r];
            if y > hi_y {
                break;
            }
            let dy = y as f64 - cy;
            let h2 = rad2 - dy * dy;
            if h2 <= 0.0 {
                continue;
            }
            let half = h2.sqrt();
            let (a, b) = (self.row_start[r], self.row_start[r + 1]);
            let row = &self.xs[a..b];
            let lo_x = (cx - half).floor() as i64;
            let start = row.partition_point(|&x| x < lo_x);
            for k in start..row.len() {
                let x = row[k];
                let dx = x as f64 - cx;
                if dx >= half + 1.0 {
                    break;
                }
                if dx * dx + dy * dy < rad2 {
                    f(self.ids[a + k]);
                }
            }
        }
    }

    pub fn count_in_ball(&self, center: (f64, f64), radius: f64) -> usize {
        let mut n = 0;
        self.for_each_in_ball(center, radius, |_| n += 1);
        n
    }
}
