//! Limit objects: the alpha-stable subordinator, the truncated clock limit
//! `C^(delta)`, the age process `Z` and its truncation `Z^(delta)`, and their
//! Laplace exponents.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path::{Path, PathError};
use crate::rngs::exponential;
use crate::special::{gamma, integrate, QuadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("alpha = {0} must lie in (0, 1)")]
    Alpha(f64),
    #[error("{name} = {value} must be positive")]
    NonPositive { name: &'static str, value: f64 },
    #[error("jump at {0} has no mark")]
    MissingMark(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Path(#[from] PathError),
}

fn check_alpha(alpha: f64) -> Result<(), LimitError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LimitError::Alpha(alpha));
    }
    Ok(())
}

fn check_pos(name: &'static str, value: f64) -> Result<(), LimitError> {
    if !(value > 0.0) {
        return Err(LimitError::NonPositive { name, value });
    }
    Ok(())
}

/// Normalisation of the clock limit: Levy measure `Gamma(alpha+1) alpha z^{-alpha-1} dz`.
pub fn clock_levy_const(alpha: f64) -> f64 {
    gamma(alpha + 1.0)
}

/// `psi(lambda) = c Gamma(1-alpha) lambda^alpha` for Levy measure
/// `c alpha z^{-alpha-1} dz`; with the clock normalisation this is
/// `Gamma(1+alpha) Gamma(1-alpha) lambda^alpha`.
pub fn psi(alpha: f64, levy_const: f64, lambda: f64) -> f64 {
    levy_const * gamma(1.0 - alpha) * lambda.powf(alpha)
}

/// Laplace exponent of `C^(delta)`:
/// `delta^{-alpha} E[1 - exp(-lambda e tau)] = alpha int_delta^inf lambda z/(1+lambda z) z^{-alpha-1} dz`,
/// evaluated as `psi` minus the missing part below `delta`.
pub fn psi_delta(alpha: f64, delta: f64, lambda: f64) -> Result<f64, LimitError> {
    check_alpha(alpha)?;
    check_pos("delta", delta)?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    // int_0^delta lambda z^{-alpha}/(1 + lambda z) dz with z = v^{1/(1-alpha)}.
    let p = 1.0 / (1.0 - alpha);
    let below = integrate(|v| lambda / (1.0 + lambda * v.powf(p)), 0.0, delta.powf(1.0 - alpha), 1e-13)?;
    Ok(psi(alpha, clock_levy_const(alpha), lambda) - alpha * p * below)
}

/// One jump of a subordinator with its exponential mark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub loc: f64,
    pub size: f64,
    pub mark: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorPath {
    pub alpha: f64,
    pub levy_const: f64,
    pub horizon: f64,
    /// Sorted by location.
    pub jumps: Vec<Jump>,
    /// Compensation for the jumps below `truncation`, per unit time.
    pub drift: f64,
    pub truncation: f64,
}

impl SubordinatorPath {
    pub fn value(&self, t: f64) -> f64 {
        let k = self.jumps.partition_point(|j| j.loc <= t);
        self.drift * t + self.jumps[..k].iter().map(|j| j.size).sum::<f64>()
    }

    /// Graph of `t -> value(t)` on `[0, horizon]`.
    pub fn to_path(&self) -> Result<Path, LimitError> {
        let mut pts = Vec::with_capacity(2 * self.jumps.len() + 2);
        let mut level = 0.0;
        pts.push((0.0, 0.0));
        for j in &self.jumps {
            let before = level + self.drift * j.loc;
            pts.push((j.loc, before));
            level += j.size;
            pts.push((j.loc, before + j.size));
        }
        pts.push((self.horizon, level + self.drift * self.horizon));
        Ok(Path::new(pts)?)
    }

    /// `V(t) = drift t + sum_{loc <= t} size * mark`, the time change of `Z`.
    pub fn marked_value(&self, t: f64) -> f64 {
        let k = self.jumps.partition_point(|j| j.loc <= t);
        self.drift * t + self.jumps[..k].iter().map(|j| j.size * j.mark).sum::<f64>()
    }
}

/// Samples the subordinator with Levy measure `levy_const alpha z^{-alpha-1} dz`
/// on `[0, horizon]`: jumps of size at least `eps` exactly, smaller ones
/// replaced by their mean as a drift.
pub fn sample_stable<R: Rng + ?Sized>(
    alpha: f64,
    horizon: f64,
    eps: f64,
    levy_const: f64,
    rng: &mut R,
) -> Result<SubordinatorPath, LimitError> {
    check_alpha(alpha)?;
    check_pos("horizon", horizon)?;
    check_pos("eps", eps)?;
    check_pos("levy_const", levy_const)?;
    let mean = horizon * levy_const * eps.powf(-alpha);
    let count = Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
    let mut jumps: Vec<Jump> = (0..count)
        .map(|_| Jump {
            loc: rng.random::<f64>() * horizon,
            size: pareto(rng, alpha, eps),
            mark: exponential(rng, 1.0),
        })
        .collect();
    jumps.sort_by(|a, b| a.loc.total_cmp(&b.loc));
    Ok(SubordinatorPath {
        alpha,
        levy_const,
        horizon,
        jumps,
        drift: levy_const * alpha * eps.powf(1.0 - alpha) / (1.0 - alpha),
        truncation: eps,
    })
}

#[inline]
fn pareto<R: Rng + ?Sized>(rng: &mut R, alpha: f64, scale: f64) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    scale * u.powf(-1.0 / alpha)
}

/// One jump of `C^(delta)`: arrival time, depth `tau` and exponential mark `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapJump {
    pub time: f64,
    pub depth: f64,
    pub mark: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedStepPath {
    pub alpha: f64,
    pub delta: f64,
    pub horizon: f64,
    pub jumps: Vec<TrapJump>,
}

impl MarkedStepPath {
    /// `sum_{T(n) <= t} tau(n) e(n)`.
    pub fn value(&self, t: f64) -> f64 {
        self.jumps.iter().take_while(|j| j.time <= t).map(|j| j.depth * j.mark).sum()
    }

    pub fn to_path(&self) -> Result<Path, LimitError> {
        let mut times = Vec::with_capacity(self.jumps.len());
        let mut values = vec![0.0];
        let mut level = 0.0;
        for j in &self.jumps {
            level += j.depth * j.mark;
            times.push(j.time);
            values.push(level);
        }
        Ok(Path::step(0.0, self.horizon, &times, &values)?)
    }

    /// Keeps only jumps with depth at least `delta`, which is again a
    /// `C^(delta)` sample coupled to this one.
    pub fn thin(&self, delta: f64) -> MarkedStepPath {
        MarkedStepPath {
            alpha: self.alpha,
            delta: delta.max(self.delta),
            horizon: self.horizon,
            jumps: self.jumps.iter().copied().filter(|j| j.depth >= delta).collect(),
        }
    }
}

/// Samples `C^(delta)` on `[0, horizon]`: Poisson(`delta^{-alpha}`) arrivals,
/// Pareto depths on `[delta, inf)`, Exp(1) marks.
pub fn sample_c_delta<R: Rng + ?Sized>(
    alpha: f64,
    delta: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<MarkedStepPath, LimitError> {
    check_alpha(alpha)?;
    check_pos("delta", delta)?;
    check_pos("horizon", horizon)?;
    let rate = delta.powf(-alpha);
    let mut jumps = Vec::new();
    let mut t = exponential(rng, rate);
    while t <= horizon {
        jumps.push(TrapJump { time: t, depth: pareto(rng, alpha, delta), mark: exponential(rng, 1.0) });
        t += exponential(rng, rate);
    }
    Ok(MarkedStepPath { alpha, delta, horizon, jumps })
}

/// One holding of the age process: value `size` during `[start, start + hold)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeHolding {
    pub start: f64,
    pub hold: f64,
    pub size: f64,
}

/// Piecewise-constant age path. Gaps between holdings (the drift part of the
/// time change) carry the value 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgePath {
    pub holdings: Vec<AgeHolding>,
    pub horizon: f64,
}

impl AgePath {
    pub fn value(&self, t: f64) -> f64 {
        let k = self.holdings.partition_point(|h| h.start <= t);
        match k.checked_sub(1).map(|i| self.holdings[i]) {
            Some(h) if t < h.start + h.hold => h.size,
            _ => 0.0,
        }
    }

    pub fn to_path(&self) -> Result<Path, LimitError> {
        let mut pts = vec![(0.0, 0.0)];
        for h in &self.holdings {
            let end = (h.start + h.hold).min(self.horizon);
            if h.start >= self.horizon {
                break;
            }
            pts.push((h.start, 0.0));
            pts.push((h.start, h.size));
            pts.push((end, h.size));
            pts.push((end, 0.0));
        }
        pts.push((self.horizon, 0.0));
        Ok(Path::new(pts)?)
    }
}

/// `Z` from a marked subordinator path: `V` is the marked time change, `W` its
/// right-continuous inverse, and `Z(t)` the size of the jump straddling level
/// `t`. With `truncation = Some(delta)` only jumps larger than `delta` enter
/// and the drift is dropped, which gives `Z^(delta)`: values `size_i` held for
/// `size_i * mark_i`.
pub fn build_z(path: &SubordinatorPath, horizon: f64, truncation: Option<f64>) -> Result<AgePath, LimitError> {
    check_pos("horizon", horizon)?;
    let drift = if truncation.is_some() { 0.0 } else { path.drift };
    let mut holdings = Vec::new();
    let mut level = 0.0;
    let mut last_loc = 0.0;
    for j in &path.jumps {
        if !(j.mark > 0.0) {
            return Err(LimitError::MissingMark(j.loc));
        }
        if let Some(d) = truncation {
            if j.size <= d {
                continue;
            }
        }
        level += drift * (j.loc - last_loc);
        last_loc = j.loc;
        if level >= horizon {
            break;
        }
        let hold = j.size * j.mark;
        holdings.push(AgeHolding { start: level, hold, size: j.size });
        level += hold;
        if level >= horizon {
            break;
        }
    }
    Ok(AgePath { holdings, horizon })
}

/// Samples `Z_t` directly, generating jumps in location order until the
/// marked time change passes `t`. Returns 0 when `t` falls in the drift part.
pub fn sample_z_at<R: Rng + ?Sized>(
    alpha: f64,
    t: f64,
    eps: f64,
    levy_const: f64,
    rng: &mut R,
) -> Result<f64, LimitError> {
    check_alpha(alpha)?;
    check_pos("t", t)?;
    check_pos("eps", eps)?;
    let rate = levy_const * eps.powf(-alpha);
    let drift = levy_const * alpha * eps.powf(1.0 - alpha) / (1.0 - alpha);
    let mut level = 0.0;
    loop {
        level += drift * exponential(rng, rate);
        if level > t {
            return Ok(0.0);
        }
        let size = pareto(rng, alpha, eps);
        level += size * exponential(rng, 1.0);
        if level > t {
            return Ok(size);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngs::stream;
    use crate::special::integrate_to_inf;
    use crate::stats::{ks_test, laplace_compare, poisson_z, Reference};

    const A: f64 = 0.6;

    #[test]
    fn psi_closed_form_by_quadrature() {
        // int (1 - e^{-lambda u}) Gamma(a+1) a u^{-a-1} du, split at 1.
        let c = clock_levy_const(A);
        for lambda in [0.5, 1.0, 2.0] {
            let f = |u: f64| -(-lambda * u).exp_m1() * c * A * u.powf(-A - 1.0);
            let near = integrate(|v: f64| f(v.powf(1.0 / (1.0 - A))) * v.powf(A / (1.0 - A)) / (1.0 - A), 0.0, 1.0, 1e-12)
                .unwrap();
            let far = integrate_to_inf(f, 1.0, 1e-12).unwrap();
            let q = near + far;
            assert!((q - psi(A, c, lambda)).abs() < 1e-8 * q, "{q}");
        }
        let g = gamma(1.0 + A) * gamma(1.0 - A);
        assert!((g - std::f64::consts::PI * A / (std::f64::consts::PI * A).sin()).abs() < 1e-12);
    }

    #[test]
    fn psi_delta_against_two_dimensional_quadrature() {
        let delta = 0.3;
        for lambda in [0.5, 1.0, 2.0] {
            // delta^{-a} int int (1 - e^{-lambda e z}) e^{-e} a delta^a z^{-a-1} de dz.
            let inner = |z: f64| integrate_to_inf(|e| -(-lambda * e * z).exp_m1() * (-e).exp(), 0.0, 1e-13).unwrap();
            let q = integrate_to_inf(|z| inner(z) * A * z.powf(-A - 1.0), delta, 1e-11).unwrap();
            let v = psi_delta(A, delta, lambda).unwrap();
            assert!((q - v).abs() < 1e-7 * v, "{q} vs {v}");
        }
    }

    #[test]
    fn psi_delta_converges_monotonically() {
        for lambda in [0.25, 0.5, 1.0] {
            let full = psi(A, clock_levy_const(A), lambda);
            let mut prev = 0.0;
            for delta in [1.0, 0.1, 1e-2, 1e-3, 1e-4] {
                let v = psi_delta(A, delta, lambda).unwrap();
                assert!(v > prev && v < full);
                prev = v;
            }
            assert!((full - prev) / full < 0.02, "lambda {lambda}: {}", (full - prev) / full);
        }
        assert!(matches!(psi_delta(1.2, 0.1, 1.0), Err(LimitError::Alpha(_))));
    }

    #[test]
    fn stable_jump_count_is_poisson() {
        let mut rng = stream(21, 0);
        let (eps, s) = (0.01, 2.0);
        let c = clock_levy_const(A);
        let paths = 10_000;
        let total: usize = (0..paths).map(|_| sample_stable(A, s, eps, c, &mut rng).unwrap().jumps.len()).sum();
        let mean = paths as f64 * s * c * eps.powf(-A);
        assert!(poisson_z(total as f64, mean) > 0.01, "{total} vs {mean}");
    }

    #[test]
    fn stable_laplace_and_self_similarity() {
        let mut rng = stream(22, 0);
        let c = clock_levy_const(A);
        let v1: Vec<f64> = (0..4000).map(|_| sample_stable(A, 1.0, 1e-4, c, &mut rng).unwrap().value(1.0)).collect();
        let r = laplace_compare("stable", &v1, |l| psi(A, c, l), &[0.5, 1.0, 2.0], 500, 0.01, 3).unwrap();
        assert!(r.passed(), "{r:?}");
        let scale = 3f64.powf(1.0 / A);
        let v3: Vec<f64> =
            (0..4000).map(|_| sample_stable(A, 3.0, 1e-4, c, &mut rng).unwrap().value(3.0) / scale).collect();
        assert!(ks_test("ss", &v1, &Reference::Empirical(v3), 0.01).unwrap().passed());
    }

    #[test]
    fn c_delta_counts_depths_and_coupling() {
        let mut rng = stream(23, 0);
        let delta = 0.3;
        let paths: Vec<MarkedStepPath> = (0..5000).map(|_| sample_c_delta(A, delta, 1.0, &mut rng).unwrap()).collect();
        let total: usize = paths.iter().map(|p| p.jumps.len()).sum();
        assert!(poisson_z(total as f64, 5000.0 * delta.powf(-A)) > 0.01);
        let depths: Vec<f64> = paths.iter().flat_map(|p| p.jumps.iter().map(|j| j.depth)).collect();
        assert!(ks_test("depth", &depths, &Reference::ParetoTail { alpha: A, delta }, 0.01).unwrap().passed());
        let vals: Vec<f64> = paths.iter().map(|p| p.value(1.0)).collect();
        let r = laplace_compare("cd", &vals, |l| psi_delta(A, delta, l).unwrap(), &[0.5, 1.0, 2.0], 500, 0.01, 4)
            .unwrap();
        assert!(r.passed(), "{r:?}");
        for p in paths.iter().take(200) {
            let thin = p.thin(0.6);
            for k in 0..=20 {
                let t = k as f64 / 20.0;
                assert!(thin.value(t) <= p.value(t));
            }
            let path = p.to_path().unwrap();
            assert!(path.is_nondecreasing());
            assert!((path.eval(1.0) - p.value(1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn z_structure_and_inverse() {
        let mut rng = stream(24, 0);
        let c = clock_levy_const(A);
        let p = sample_stable(A, 5.0, 1e-3, c, &mut rng).unwrap();
        let s = p.to_path().unwrap();
        assert!(s.is_nondecreasing());
        let delta = 0.05;
        let zd = build_z(&p, 1e9, Some(delta)).unwrap();
        let big: Vec<&Jump> = p.jumps.iter().filter(|j| j.size > delta).collect();
        assert_eq!(zd.holdings.len(), big.len());
        let mut start = 0.0;
        for (h, j) in zd.holdings.iter().zip(&big) {
            assert_eq!(h.size, j.size);
            assert_eq!(h.hold, j.size * j.mark);
            assert!((h.start - start).abs() <= 1e-12 * start.max(1.0));
            start += h.hold;
        }
        // V(W(t)-) <= t <= V(W(t)) on a grid, with W the inverse of V.
        let z = build_z(&p, 4.0, None).unwrap();
        let mut v_pts = vec![(0.0, 0.0)];
        let mut level = 0.0;
        let mut last = 0.0;
        for j in &p.jumps {
            level += p.drift * (j.loc - last);
            last = j.loc;
            v_pts.push((j.loc, level));
            level += j.size * j.mark;
            v_pts.push((j.loc, level));
        }
        v_pts.push((p.horizon, level + p.drift * (p.horizon - last)));
        let v = Path::new(v_pts).unwrap();
        let w = crate::path::path_inverse(&v).unwrap();
        for k in 0..200 {
            let t = 4.0 * k as f64 / 200.0;
            let wt = w.eval(t);
            assert!(v.eval_left(wt) <= t + 1e-9 && t <= v.eval(wt) + 1e-9);
            let zt = z.value(t);
            if zt > 0.0 {
                let j = p.jumps.iter().find(|j| j.loc == wt).expect("W(t) is a jump location");
                assert_eq!(j.size, zt);
            }
        }
        assert!(z.to_path().unwrap().points().iter().all(|q| q.1 >= 0.0));
    }

    #[test]
    fn z_self_similarity() {
        let mut rng = stream(25, 0);
        let c = clock_levy_const(A);
        let z1: Vec<f64> = (0..3000).map(|_| sample_z_at(A, 1.0, 1e-5, c, &mut rng).unwrap()).collect();
        let z2: Vec<f64> = (0..3000).map(|_| sample_z_at(A, 2.0, 1e-5, c, &mut rng).unwrap() / 2.0).collect();
        assert!(ks_test("z", &z1, &Reference::Empirical(z2), 0.01).unwrap().passed());
        // Normalisation invariance of the law of Z_1.
        let zc: Vec<f64> = (0..3000).map(|_| sample_z_at(A, 1.0, 1e-5, 5.0 * c, &mut rng).unwrap()).collect();
        assert!(ks_test("zc", &z1, &Reference::Empirical(zc), 0.01).unwrap().passed());
    }
}
