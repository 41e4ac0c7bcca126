//! Scale quantities: `phi`, `alpha`, `t_N`, `d_N`, `b_N`, `B_N` and the
//! shallow-trap mass. All are pure functions of the model parameters, except
//! the Monte Carlo estimate of `d_N`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, ModelParams};
use crate::special::{integrate, norm_cdf, norm_sf, QuadError, INV_SQRT_2PI};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaleError {
    #[error("d_N = {0} is too small (needs d_N > e)")]
    DnTooSmall(f64),
    #[error("delta = {0} must lie in (0, 1)")]
    DeltaRange(f64),
    #[error("alpha = {0:.4} >= 1: outside the aging regime")]
    NotAging(f64),
    #[error("need at least 2 replicas, got {0}")]
    TooFewReplicas(usize),
    #[error("estimated {events:e} events exceeds the budget of {budget:e}")]
    Budget { events: f64, budget: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("walk: {0}")]
    Walk(String),
}

/// `phi(lambda) = E[exp(lambda E)] = 1/2 + exp(lambda^2/2) Phi(lambda)`.
pub fn phi(lambda: f64) -> f64 {
    0.5 + (0.5 * lambda * lambda).exp() * norm_cdf(lambda)
}

/// Depth-scale level with `P[E >= b_N] ~ 1/d_N`.
pub fn b_n(d_n: f64) -> Result<f64, ScaleError> {
    if !(d_n > std::f64::consts::E) {
        return Err(ScaleError::DnTooSmall(d_n));
    }
    let l = d_n.ln();
    let r = (2.0 * l).sqrt();
    Ok(r - (l.ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * r))
}

/// How `t_N` is pinned, given only `log t_N ~ cbar N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeScaleRule {
    /// `t_N = exp(cbar N)`.
    ExpCbarN,
    /// `t_N = exp(cbar N) / (N^2 phi(a)^2)`, so that `log d_N = cbar N` exactly
    /// and the finite-N depth tail index sits close to `alpha`.
    #[default]
    DiscoveryMatched,
}

/// Which `d_N` feeds `b_N` and `B_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DnSource {
    #[default]
    Asymptotic,
    Estimated,
}

/// Monte Carlo mean with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            f64::NAN
        };
        Estimate { mean, stderr: (var / n as f64).sqrt(), samples: n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub n: u32,
    pub log_t_n: f64,
    pub t_n: f64,
    pub b_n: f64,
    pub log_b_n: f64,
    pub d_n_asymptotic: f64,
    pub d_n_estimate: Option<Estimate>,
    /// The `d_N` actually used for `b_N`.
    pub d_n: f64,
    pub alpha: f64,
    pub phi_a: f64,
    /// `N^2 phi(a)^2`, the clock normalisation.
    pub clock_factor: f64,
    /// `-d log P[tau >= z B_N] / d log z` at `z = 1`; tends to `alpha`.
    pub tail_index_local: f64,
    pub beta_sqrt_n: f64,
    pub time_scale: TimeScaleRule,
    pub d_n_source: DnSource,
}

impl ScaleSet {
    /// Closed-form scales using the asymptotic `d_N = t_N N^2 phi(a)^2`.
    pub fn compute(params: &ModelParams, rule: TimeScaleRule) -> Result<ScaleSet, ScaleError> {
        Self::build(params, rule, None)
    }

    /// Scales with `b_N` driven by a Monte Carlo estimate of `d_N`.
    pub fn with_estimate(params: &ModelParams, rule: TimeScaleRule, est: Estimate) -> Result<ScaleSet, ScaleError> {
        Self::build(params, rule, Some(est))
    }

    fn build(params: &ModelParams, rule: TimeScaleRule, est: Option<Estimate>) -> Result<ScaleSet, ScaleError> {
        params.validate()?;
        let n = params.n as f64;
        let phi_a = phi(params.a);
        let clock_factor = n * n * phi_a * phi_a;
        let log_t_n = match rule {
            TimeScaleRule::ExpCbarN => params.cbar * n,
            TimeScaleRule::DiscoveryMatched => params.cbar * n - clock_factor.ln(),
        };
        let t_n = log_t_n.exp();
        let d_n_asymptotic = t_n * clock_factor;
        let (d_n, d_n_source) = match est {
            Some(e) => (e.mean, DnSource::Estimated),
            None => (d_n_asymptotic, DnSource::Asymptotic),
        };
        let b = b_n(d_n)?;
        let beta_sqrt_n = params.beta * n.sqrt();
        let mills = INV_SQRT_2PI * (-0.5 * b * b).exp() / norm_sf(b);
        Ok(ScaleSet {
            n: params.n,
            log_t_n,
            t_n,
            b_n: b,
            log_b_n: beta_sqrt_n * b,
            d_n_asymptotic,
            d_n_estimate: est,
            d_n,
            alpha: params.alpha(),
            phi_a,
            clock_factor,
            tail_index_local: mills / beta_sqrt_n,
            beta_sqrt_n,
            time_scale: rule,
            d_n_source,
        })
    }

    /// `log(delta B_N)`, the deep-trap threshold on `log tau`.
    pub fn log_deep_threshold(&self, delta: f64) -> f64 {
        delta.ln() + self.log_b_n
    }

    /// `d_N P[tau >= z B_N]`, which tends to `z^{-alpha}`.
    pub fn tail_ratio(&self, z: f64) -> f64 {
        let level = self.b_n + z.ln() / self.beta_sqrt_n;
        let p = if level <= 0.0 { 1.0 } else { norm_sf(level) };
        self.d_n * p
    }

    /// Probability that a site is a deep trap at level `delta`.
    pub fn deep_probability(&self, delta: f64) -> f64 {
        self.tail_ratio(delta) / self.d_n
    }
}

/// `(d_N / B_N) E[tau 1{tau <= delta B_N}]`, the mean clock mass carried by
/// shallow traps per unit of `t_N`; tends to `alpha/(1-alpha) delta^{1-alpha}`.
pub fn shallow_trap_mass(scales: &ScaleSet, delta: f64) -> Result<f64, ScaleError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ScaleError::DeltaRange(delta));
    }
    if scales.alpha >= 1.0 {
        return Err(ScaleError::NotAging(scales.alpha));
    }
    let s = scales.beta_sqrt_n;
    let u_max = scales.b_n + delta.ln() / s;
    let log_ratio = scales.d_n.ln() - scales.log_b_n;
    if u_max < 0.0 {
        // delta B_N < 1 <= tau: nothing is shallow.
        return Ok(0.0);
    }
    // Integrand of the positive part, rescaled by its value at the upper end.
    let peak = s * u_max - 0.5 * u_max * u_max;
    let j = integrate(
        |v| {
            let u = u_max - v;
            (s * u - 0.5 * u * u - peak).exp()
        },
        0.0,
        u_max,
        1e-11,
    )?;
    let atom = 0.5 * log_ratio.exp();
    Ok(atom + (log_ratio + peak).exp() * INV_SQRT_2PI * j)
}

/// Limit of [`shallow_trap_mass`] as `N -> inf`.
pub fn shallow_trap_limit(alpha: f64, delta: f64) -> f64 {
    alpha / (1.0 - alpha) * delta.powf(1.0 - alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::integrate_to_inf;

    fn params(n: u32, alpha: f64, cbar: f64, abar: f64) -> ModelParams {
        ModelParams::for_alpha(n, alpha, abar, cbar, 0.3, 1)
    }

    #[test]
    fn phi_values() {
        assert!((phi(0.0) - 1.0).abs() < 1e-15);
        // Oracle: 1/2 + (1/sqrt(2 pi)) int_0^inf exp(l u - u^2/2) du.
        let oracle = |l: f64| 0.5 + INV_SQRT_2PI * integrate_to_inf(|u| (l * u - 0.5 * u * u).exp(), 0.0, 1e-13).unwrap();
        let p1 = oracle(1.0);
        assert!((p1 - 1.887_147).abs() < 1e-5, "{p1}");
        assert!((phi(1.0) - p1).abs() < 1e-10);
        for i in 0..=50 {
            let l = i as f64 * 0.1;
            assert!(phi(l) <= 2.0 * (0.5 * l * l).exp());
            assert!((phi(l) - oracle(l)).abs() < 1e-9 * phi(l));
            if i > 0 {
                assert!(phi(l) > phi(l - 0.1));
            }
        }
    }

    #[test]
    fn b_n_formula_and_tail() {
        let d = 10f64.exp();
        let b = b_n(d).unwrap();
        let expect = 20f64.sqrt() - (10f64.ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * 20f64.sqrt());
        assert!((b - expect).abs() < 1e-12);
        assert!((b - 3.9317).abs() < 1e-3, "{b}");
        // Gaussian tail by quadrature.
        let tail = INV_SQRT_2PI * integrate_to_inf(|u| (-0.5 * u * u).exp(), b, 1e-13).unwrap();
        let r = d * tail;
        assert!(r > 0.8 && r < 1.25, "{r}");
        assert!(matches!(b_n(2.0), Err(ScaleError::DnTooSmall(_))));

        let mut prev = b_n(3.0).unwrap();
        for k in 2..60 {
            let cur = b_n((k as f64).exp()).unwrap();
            assert!(cur > prev);
            prev = cur;
        }
        // The ratio approaches 1 from below; 5% is reached from log d = 20 on.
        let mut prev_err = f64::INFINITY;
        for l in [15.0f64, 20.0, 30.0, 40.0] {
            let r = l.exp() * norm_sf(b_n(l.exp()).unwrap());
            let err = (r - 1.0).abs();
            assert!(err < prev_err);
            assert!(err < if l < 20.0 { 0.06 } else { 0.05 }, "log d = {l}: {r}");
            prev_err = err;
        }
    }

    #[test]
    fn scale_invariants() {
        let p = params(24, 0.6, 0.575, 0.5);
        for rule in [TimeScaleRule::ExpCbarN, TimeScaleRule::DiscoveryMatched] {
            let s = ScaleSet::compute(&p, rule).unwrap();
            assert_eq!(s.log_b_n, p.beta * 24f64.sqrt() * s.b_n);
            assert!((s.alpha - 0.6).abs() < 1e-12);
            assert!(((s.d_n_asymptotic - s.t_n * 576.0 * phi(p.a).powi(2)) / s.d_n_asymptotic).abs() < 1e-12);
        }
        let s = ScaleSet::compute(&p, TimeScaleRule::DiscoveryMatched).unwrap();
        assert!((s.d_n.ln() - 0.575 * 24.0).abs() < 1e-9);
    }

    #[test]
    fn tail_calibration_by_quadrature() {
        // d_N P[tau >= z B_N] -> z^{-alpha}; the error shrinks as log d_N grows.
        let alpha = 0.6;
        let mut prev = [f64::INFINITY; 3];
        for (i, logd) in [15.0, 25.0, 40.0].into_iter().enumerate() {
            let n = 63u32.min((logd / 0.6) as u32);
            let cbar = logd / n as f64;
            let p = ModelParams::for_alpha(n, alpha, 0.0, cbar.min(0.69), 0.3, 1);
            let s = ScaleSet::compute(&p, TimeScaleRule::DiscoveryMatched).unwrap();
            for (j, z) in [0.5f64, 1.0, 2.0].into_iter().enumerate() {
                let level = s.b_n + z.ln() / s.beta_sqrt_n;
                let q = s.d_n * INV_SQRT_2PI * integrate_to_inf(|u| (-0.5 * u * u).exp(), level, 1e-14).unwrap();
                let target = z.powf(-alpha);
                let err = ((q - target) / target).abs();
                assert!((q - s.tail_ratio(z)).abs() < 1e-8 * q);
                if i > 0 {
                    assert!(err < prev[j] + 1e-9, "logd={logd} z={z}: {err} vs {}", prev[j]);
                }
                prev[j] = err;
            }
            let _ = i;
        }
        assert!(prev.iter().all(|e| *e < 0.25), "{prev:?}");
    }

    #[test]
    fn shallow_mass_matches_closed_form_and_decreases() {
        let p = params(24, 0.6, 0.575, 0.5);
        let s = ScaleSet::compute(&p, TimeScaleRule::DiscoveryMatched).unwrap();
        let mut prev = f64::INFINITY;
        for delta in [0.5, 0.2, 0.1, 0.05] {
            let v = shallow_trap_mass(&s, delta).unwrap();
            // Closed form of the same integral through the Gaussian CDF.
            let sq = s.beta_sqrt_n;
            let u = s.b_n + f64::ln(delta) / sq;
            let log_int = 0.5 * sq * sq + (norm_cdf(u - sq) - norm_cdf(-sq)).ln();
            let closed = (s.d_n.ln() - s.log_b_n).exp() * 0.5 + (s.d_n.ln() - s.log_b_n + log_int).exp();
            assert!(((v - closed) / closed).abs() < 1e-6, "{v} vs {closed}");
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn shallow_mass_slope_at_large_n() {
        let alpha = 0.6;
        let p = ModelParams::for_alpha(60, alpha, 0.0, 0.6, 0.3, 1);
        let s = ScaleSet::compute(&p, TimeScaleRule::DiscoveryMatched).unwrap();
        let grid = [0.5, 0.2, 0.1, 0.05];
        let xs: Vec<f64> = grid.iter().map(|d: &f64| d.ln()).collect();
        let ys: Vec<f64> = grid.iter().map(|&d| shallow_trap_mass(&s, d).unwrap().ln()).collect();
        let slope = crate::stats::ols_slope(&xs, &ys);
        assert!((slope - (1.0 - alpha)).abs() < 0.15, "{slope}");
    }

    #[test]
    fn shallow_mass_rejects_bad_input() {
        let mut p = params(20, 0.6, 0.5, 0.5);
        let s = ScaleSet::compute(&p, TimeScaleRule::DiscoveryMatched).unwrap();
        assert!(matches!(shallow_trap_mass(&s, 1.5), Err(ScaleError::DeltaRange(_))));
        p.beta = (2.0 * p.cbar).sqrt() / 1.2;
        let s = ScaleSet::compute(&p, TimeScaleRule::DiscoveryMatched).unwrap();
        assert!(matches!(shallow_trap_mass(&s, 0.5), Err(ScaleError::NotAging(_))));
    }
}
