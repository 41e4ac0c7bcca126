//! Càdlàg paths stored as completed graphs.
//!
//! A path is a polyline through points `(x_k, v_k)` with `x` nondecreasing.
//! Two points with the same `x` form a jump; evaluation is right-continuous,
//! so at a jump location the last point wins. Step paths, linear drifts and
//! mixtures of both share this representation, and the right-continuous
//! inverse of a nondecreasing path is obtained by swapping coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("path has no points")]
    Empty,
    #[error("abscissae must be nondecreasing")]
    Unsorted,
    #[error("path is not nondecreasing")]
    NotMonotone,
    #[error("paths are defined on [0, {0}] and [0, {1}]; distance requested on [0, {2}]")]
    Domain(f64, f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pts: Vec<(f64, f64)>,
}

impl Path {
    pub fn new(pts: Vec<(f64, f64)>) -> Result<Path, PathError> {
        if pts.is_empty() {
            return Err(PathError::Empty);
        }
        if pts.windows(2).any(|w| !(w[1].0 >= w[0].0)) {
            return Err(PathError::Unsorted);
        }
        Ok(Path { pts })
    }

    /// Step path on `[start, end]`: `values[0]` on `[start, jumps[0])`,
    /// `values[k]` on `[jumps[k-1], jumps[k])`, last value up to `end`.
    pub fn step(start: f64, end: f64, jumps: &[f64], values: &[f64]) -> Result<Path, PathError> {
        assert_eq!(values.len(), jumps.len() + 1, "one more value than jump");
        let mut pts = Vec::with_capacity(2 * values.len());
        pts.push((start, values[0]));
        for (k, &j) in jumps.iter().enumerate() {
            pts.push((j, values[k]));
            pts.push((j, values[k + 1]));
        }
        pts.push((end, *values.last().unwrap()));
        Path::new(pts)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.pts
    }

    pub fn start(&self) -> f64 {
        self.pts[0].0
    }

    pub fn end(&self) -> f64 {
        self.pts[self.pts.len() - 1].0
    }

    /// Right-continuous evaluation; clamps outside the domain.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.pts.partition_point(|p| p.0 <= t);
        if i == 0 {
            return self.pts[0].1;
        }
        let (x0, v0) = self.pts[i - 1];
        if x0 == t || i == self.pts.len() {
            return v0;
        }
        let (x1, v1) = self.pts[i];
        v0 + (v1 - v0) * (t - x0) / (x1 - x0)
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let i = self.pts.partition_point(|p| p.0 < t);
        if i == 0 {
            return self.pts[0].1;
        }
        let (x0, v0) = self.pts[i - 1];
        if i == self.pts.len() {
            return v0;
        }
        let (x1, v1) = self.pts[i];
        if x1 == x0 {
            return v0;
        }
        v0 + (v1 - v0) * (t - x0) / (x1 - x0)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.pts.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    /// Restriction to `[start, t]`.
    pub fn truncate(&self, t: f64) -> Path {
        let mut pts: Vec<(f64, f64)> = self.pts.iter().copied().filter(|p| p.0 < t).collect();
        if pts.is_empty() {
            pts.push((t, self.pts[0].1));
        } else {
            pts.push((t, self.eval_left(t)));
        }
        Path { pts }
    }

    /// Sorted distinct abscissae.
    fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pts.iter().map(|p| p.0)
    }
}

/// Right-continuous inverse `f^{-1}(t) = inf{y : f(y) > t}` of a
/// nondecreasing path, defined on `[0, f(end)]` and capped at `end`.
pub fn path_inverse(f: &Path) -> Result<Path, PathError> {
    if !f.is_nondecreasing() {
        return Err(PathError::NotMonotone);
    }
    let mut pts = Vec::with_capacity(f.pts.len() + 1);
    let (x0, v0) = f.pts[0];
    if v0 > 0.0 {
        pts.push((0.0, x0));
    }
    // Flats of f become jumps of the inverse; at a jump location of the
    // inverse the right end of the flat is the right-continuous value.
    pts.extend(f.pts.iter().map(|&(x, v)| (v, x)));
    Path::new(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    L1,
    Sup,
    InverseSup,
}

/// Distance between two paths on `[0, horizon]`.
pub fn path_distance(f: &Path, g: &Path, kind: DistanceKind, horizon: f64) -> Result<f64, PathError> {
    match kind {
        DistanceKind::L1 | DistanceKind::Sup => {
            if f.end() < horizon || g.end() < horizon || f.start() > 0.0 || g.start() > 0.0 {
                return Err(PathError::Domain(f.end(), g.end(), horizon));
            }
            let mut grid: Vec<f64> =
                f.breakpoints().chain(g.breakpoints()).filter(|&x| x >= 0.0 && x <= horizon).collect();
            grid.push(0.0);
            grid.push(horizon);
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            if kind == DistanceKind::Sup {
                let mut m = 0.0f64;
                for &x in &grid {
                    m = m.max((f.eval(x) - g.eval(x)).abs());
                    m = m.max((f.eval_left(x) - g.eval_left(x)).abs());
                }
                return Ok(m);
            }
            let mut total = 0.0;
            for w in grid.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b <= a {
                    continue;
                }
                // Both paths are affine on (a, b).
                let da = f.eval(a) - g.eval(a);
                let db = f.eval_left(b) - g.eval_left(b);
                total += abs_affine_integral(da, db, b - a);
            }
            Ok(total)
        }
        DistanceKind::InverseSup => {
            let fi = path_inverse(f)?;
            let gi = path_inverse(g)?;
            let top = f.eval(horizon).min(g.eval(horizon));
            let fi = fi.truncate(top);
            let gi = gi.truncate(top);
            let mut m = 0.0f64;
            let mut grid: Vec<f64> = fi.breakpoints().chain(gi.breakpoints()).filter(|&x| x < top).collect();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            for &x in &grid {
                m = m.max((fi.eval(x) - gi.eval(x)).abs());
                m = m.max((fi.eval_left(x) - gi.eval_left(x)).abs());
            }
            Ok(m)
        }
    }
}

/// `int_0^h |da + (db - da) s / h| ds`.
fn abs_affine_integral(da: f64, db: f64, h: f64) -> f64 {
    if da * db >= 0.0 {
        0.5 * (da.abs() + db.abs()) * h
    } else {
        let r = da.abs() / (da.abs() + db.abs());
        0.5 * h * (da.abs() * r + db.abs() * (1.0 - r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_step(at: f64) -> Path {
        Path::step(0.0, 1.0, &[at], &[0.0, 1.0]).unwrap()
    }

    #[test]
    fn eval_is_right_continuous() {
        let p = unit_step(0.5);
        assert_eq!(p.eval(0.49), 0.0);
        assert_eq!(p.eval(0.5), 1.0);
        assert_eq!(p.eval_left(0.5), 0.0);
    }

    #[test]
    fn identity_inverse() {
        let id = Path::new(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).unwrap();
        let inv = path_inverse(&id).unwrap();
        for i in 0..=40 {
            let t = i as f64 * 0.05;
            assert!((inv.eval(t) - t).abs() < 1e-15);
        }
    }

    #[test]
    fn single_jump_inverse() {
        // f = 0 on [0, 0.4), 2 on [0.4, 1]: f^{-1}(t) = 0.4 for t in [0, 2), 1 at t = 2.
        let f = Path::step(0.0, 1.0, &[0.4], &[0.0, 2.0]).unwrap();
        let inv = path_inverse(&f).unwrap();
        assert_eq!(inv.eval(0.0), 0.4);
        assert_eq!(inv.eval(1.3), 0.4);
        assert_eq!(inv.eval(1.999), 0.4);
        assert_eq!(inv.eval(2.0), 1.0);
        // f = t + jump of 1 at 0.5: inverse is linear, then flat over the jump.
        let g = Path::new(vec![(0.0, 0.0), (0.5, 0.5), (0.5, 1.5), (1.0, 2.0)]).unwrap();
        let gi = path_inverse(&g).unwrap();
        assert_eq!(gi.eval(0.25), 0.25);
        assert_eq!(gi.eval(1.0), 0.5);
        assert!((gi.eval(1.75) - 0.75).abs() < 1e-15);
        assert!(path_inverse(&Path::new(vec![(0.0, 1.0), (1.0, 0.0)]).unwrap()).is_err());
    }

    #[test]
    fn distances_of_shifted_steps() {
        let (f, g) = (unit_step(0.5), unit_step(0.6));
        assert!((path_distance(&f, &g, DistanceKind::L1, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(path_distance(&f, &g, DistanceKind::Sup, 1.0).unwrap(), 1.0);
        assert!((path_distance(&f, &g, DistanceKind::InverseSup, 1.0).unwrap() - 0.1).abs() < 1e-15);
        for k in [DistanceKind::L1, DistanceKind::Sup, DistanceKind::InverseSup] {
            assert_eq!(path_distance(&f, &f, k, 1.0).unwrap(), 0.0);
        }
        assert!(path_distance(&f, &g, DistanceKind::L1, 2.0).is_err());
    }

    #[test]
    fn l1_with_crossing() {
        let f = Path::new(vec![(0.0, -1.0), (2.0, 1.0)]).unwrap();
        let g = Path::new(vec![(0.0, 0.0), (2.0, 0.0)]).unwrap();
        assert!((path_distance(&f, &g, DistanceKind::L1, 2.0).unwrap() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn double_inverse_recovers_continuity_points(
            incs in proptest::collection::vec((0.01f64..1.0, 0.0f64..2.0), 1..12)
        ) {
            let mut jumps = Vec::new();
            let mut values = vec![0.0];
            let mut x = 0.0;
            let mut v = 0.0;
            for (dx, dv) in &incs {
                x += dx;
                v += dv + 0.01;
                jumps.push(x);
                values.push(v);
            }
            let f = Path::step(0.0, x + 1.0, &jumps, &values).unwrap();
            let ff = path_inverse(&path_inverse(&f).unwrap()).unwrap();
            for i in 0..50 {
                let t = (x + 1.0) * i as f64 / 50.0;
                if jumps.iter().all(|j| (j - t).abs() > 1e-9) {
                    prop_assert!((ff.eval(t) - f.eval(t)).abs() < 1e-12);
                }
            }
        }
    }
}
