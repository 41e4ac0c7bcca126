//! Goodness-of-fit tests, tail-index and Laplace-transform comparisons, and
//! correlation measures. Every test returns a [`TestReport`] whose verdict is
//! a pure function of the inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::rngs::{stream, STREAM_STATS};
use crate::special::norm_cdf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{what}: need at least {need} samples, got {got}")]
    TooFewSamples { what: &'static str, need: usize, got: usize },
    #[error("degenerate sample: all values equal")]
    Degenerate,
    #[error("k = {k} must satisfy 1 <= k < n/2 (n = {n})")]
    BadK { k: usize, n: usize },
    #[error("non-finite sample value")]
    NonFinite,
    #[error("Laplace transform underflows at lambda = {0}")]
    Underflow(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub sample_size: usize,
    pub level: f64,
    pub verdict: Verdict,
    /// Named auxiliary numbers (per-lambda estimates, thresholds, ...).
    #[serde(default)]
    pub details: Vec<(String, f64)>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl TestReport {
    fn from_p(name: &str, statistic: f64, p: f64, n: usize, level: f64) -> TestReport {
        TestReport {
            name: name.to_string(),
            statistic,
            p_value: Some(p),
            ci: None,
            sample_size: n,
            level,
            verdict: if p >= level { Verdict::Pass } else { Verdict::Fail },
            details: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    /// Report for a deterministic check: `statistic` must not exceed `threshold`.
    pub fn threshold(name: &str, statistic: f64, threshold: f64, n: usize) -> TestReport {
        TestReport {
            name: name.to_string(),
            statistic,
            p_value: None,
            ci: None,
            sample_size: n,
            level: threshold,
            verdict: if statistic <= threshold { Verdict::Pass } else { Verdict::Fail },
            details: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.push((key.to_string(), value));
        self
    }
}

/// Suite-level summary: the suite passes when at least 95% of its tests pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub passed: usize,
    pub failed: usize,
    pub inconclusive: usize,
    pub pass_fraction: f64,
    pub verdict: Verdict,
}

pub const SUITE_PASS_FRACTION: f64 = 0.95;

pub fn suite_verdict(reports: &[TestReport]) -> SuiteSummary {
    let passed = reports.iter().filter(|r| r.verdict == Verdict::Pass).count();
    let failed = reports.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let inconclusive = reports.len() - passed - failed;
    let decided = passed + failed;
    let pass_fraction = if decided == 0 { 0.0 } else { passed as f64 / decided as f64 };
    let verdict = if decided == 0 {
        Verdict::Inconclusive
    } else if pass_fraction >= SUITE_PASS_FRACTION {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    SuiteSummary { passed, failed, inconclusive, pass_fraction, verdict }
}

/// Reference laws for the KS test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Exponential { rate: f64 },
    /// Complete spacings of a rate-`rate` Poisson process seen in `[0, window]`,
    /// the first measured from 0: `F(s) = 1 - (1 - s/window) e^{-rate s}`.
    WindowedExponential { rate: f64, window: f64 },
    /// Density `alpha delta^alpha z^{-alpha-1}` on `[delta, inf)`.
    ParetoTail { alpha: f64, delta: f64 },
    /// `2 Phi(z) - 1` on `z > 0`: the continuous part of the positive Gaussian.
    HalfGaussian,
    /// Two-sample comparison.
    Empirical(Vec<f64>),
}

impl Reference {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Reference::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Reference::WindowedExponential { rate, window } => {
                if x <= 0.0 {
                    0.0
                } else if x >= window {
                    1.0
                } else {
                    1.0 - (1.0 - x / window) * (-rate * x).exp()
                }
            }
            Reference::ParetoTail { alpha, delta } => {
                if x <= delta {
                    0.0
                } else {
                    1.0 - (x / delta).powf(-alpha)
                }
            }
            Reference::HalfGaussian => {
                if x <= 0.0 {
                    0.0
                } else {
                    2.0 * norm_cdf(x) - 1.0
                }
            }
            Reference::Empirical(_) => unreachable!("two-sample reference has no closed-form cdf"),
        }
    }
}

/// `P[K > lambda]` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn sorted_finite(samples: &[f64]) -> Result<Vec<f64>, StatsError> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub const KS_MIN_SAMPLES: usize = 20;

/// Two-sided Kolmogorov-Smirnov test with the asymptotic p-value (Stephens'
/// small-sample correction).
pub fn ks_test(name: &str, samples: &[f64], reference: &Reference, level: f64) -> Result<TestReport, StatsError> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(StatsError::TooFewSamples { what: "ks_test", need: KS_MIN_SAMPLES, got: samples.len() });
    }
    let xs = sorted_finite(samples)?;
    if xs[0] == xs[xs.len() - 1] {
        return Err(StatsError::Degenerate);
    }
    let (d, ne) = match reference {
        Reference::Empirical(other) => {
            if other.len() < KS_MIN_SAMPLES {
                return Err(StatsError::TooFewSamples { what: "ks_test", need: KS_MIN_SAMPLES, got: other.len() });
            }
            let ys = sorted_finite(other)?;
            let d = sorted_distance(&xs, &ys);
            let (n1, n2) = (xs.len() as f64, ys.len() as f64);
            (d, n1 * n2 / (n1 + n2))
        }
        r => {
            let n = xs.len() as f64;
            let mut d = 0.0f64;
            for (i, &x) in xs.iter().enumerate() {
                let f = r.cdf(x);
                d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
            }
            (d, n)
        }
    };
    let sq = ne.sqrt();
    let p = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d);
    Ok(TestReport::from_p(name, d, p, samples.len(), level))
}

/// Two-sample KS distance `sup |F_x - F_y|`.
pub fn two_sample_distance(xs: &[f64], ys: &[f64]) -> f64 {
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    sorted_distance(&a, &b)
}

fn sorted_distance(xs: &[f64], ys: &[f64]) -> f64 {
    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    d
}

/// Pearson chi-square goodness of fit with `k - 1` degrees of freedom.
pub fn chi_square_gof(name: &str, observed: &[f64], expected: &[f64], level: f64) -> Result<TestReport, StatsError> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(StatsError::Shape(format!("{} observed vs {} expected cells", observed.len(), expected.len())));
    }
    if expected.iter().any(|&e| !(e > 0.0)) {
        return Err(StatsError::Shape("expected counts must be positive".into()));
    }
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (observed.len() - 1) as f64;
    let p = ChiSquared::new(df).expect("df > 0").sf(stat);
    let n = observed.iter().sum::<f64>() as usize;
    Ok(TestReport::from_p(name, stat, p, n, level).with_detail("df", df))
}

/// Chi-square test of independence on a contingency table (rows x cols).
/// Rows or columns with zero total are dropped.
pub fn chi_square_independence(name: &str, table: &[Vec<f64>], level: f64) -> Result<TestReport, StatsError> {
    let cols = table.first().map_or(0, |r| r.len());
    if table.iter().any(|r| r.len() != cols) {
        return Err(StatsError::Shape("ragged table".into()));
    }
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let rows_used: Vec<usize> = (0..table.len()).filter(|&i| row_tot[i] > 0.0).collect();
    let cols_used: Vec<usize> = (0..cols).filter(|&j| col_tot[j] > 0.0).collect();
    if rows_used.len() < 2 || cols_used.len() < 2 {
        return Err(StatsError::Shape("need at least a 2x2 table with nonzero margins".into()));
    }
    let total: f64 = row_tot.iter().sum();
    let mut stat = 0.0;
    for &i in &rows_used {
        for &j in &cols_used {
            let e = row_tot[i] * col_tot[j] / total;
            stat += (table[i][j] - e).powi(2) / e;
        }
    }
    let df = ((rows_used.len() - 1) * (cols_used.len() - 1)) as f64;
    let p = ChiSquared::new(df).expect("df > 0").sf(stat);
    Ok(TestReport::from_p(name, stat, p, total as usize, level).with_detail("df", df))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillEstimate {
    pub alpha: f64,
    pub stderr: f64,
    /// 95% normal-approximation interval.
    pub ci: (f64, f64),
    pub k: usize,
}

/// Hill estimator of the tail index from the top `k` order statistics.
pub fn hill_alpha(samples: &[f64], k: usize) -> Result<HillEstimate, StatsError> {
    let n = samples.len();
    if k < 1 || 2 * k >= n {
        return Err(StatsError::BadK { k, n });
    }
    let mut xs = sorted_finite(samples)?;
    xs.reverse();
    let base = xs[k];
    if !(base > 0.0) {
        return Err(StatsError::Degenerate);
    }
    let gamma = xs[..k].iter().map(|x| (x / base).ln()).sum::<f64>() / k as f64;
    if !(gamma > 0.0) {
        return Err(StatsError::Degenerate);
    }
    let alpha = 1.0 / gamma;
    let stderr = alpha / (k as f64).sqrt();
    Ok(HillEstimate { alpha, stderr, ci: (alpha - 1.96 * stderr, alpha + 1.96 * stderr), k })
}

/// `-log mean(exp(-lambda x))`, the empirical Laplace exponent.
pub fn empirical_laplace_exponent(samples: &[f64], lambda: f64) -> f64 {
    let m = samples.iter().map(|x| (-lambda * x).exp()).sum::<f64>() / samples.len() as f64;
    -m.ln()
}

pub const LAPLACE_MIN_SAMPLES: usize = 100;

/// Percentile-bootstrap confidence intervals (coverage `1 - level`) for the
/// empirical Laplace exponent at each `lambda`; passes when `psi(lambda)` lies
/// inside every interval. The bootstrap stream is keyed by `seed`.
pub fn laplace_compare<F: Fn(f64) -> f64>(
    name: &str,
    samples: &[f64],
    psi: F,
    lambdas: &[f64],
    bootstrap: usize,
    level: f64,
    seed: u64,
) -> Result<TestReport, StatsError> {
    let n = samples.len();
    if n < LAPLACE_MIN_SAMPLES {
        return Err(StatsError::TooFewSamples { what: "laplace_compare", need: LAPLACE_MIN_SAMPLES, got: n });
    }
    if samples.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(StatsError::NonFinite);
    }
    let mut rng = stream(seed, STREAM_STATS);
    let mut report = TestReport {
        name: name.to_string(),
        statistic: 0.0,
        p_value: None,
        ci: None,
        sample_size: n,
        level,
        verdict: Verdict::Pass,
        details: Vec::new(),
        config: serde_json::Value::Null,
    };
    let mut worst = 0.0f64;
    for &lambda in lambdas {
        let w: Vec<f64> = samples.iter().map(|x| (-lambda * x).exp()).collect();
        let mean = w.iter().sum::<f64>() / n as f64;
        if !(mean > 0.0) {
            return Err(StatsError::Underflow(lambda));
        }
        let est = -mean.ln();
        let mut boots: Vec<f64> = (0..bootstrap)
            .map(|_| {
                let s: f64 = (0..n).map(|_| w[rng.random_range(0..n)]).sum();
                -(s / n as f64).ln()
            })
            .collect();
        boots.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&boots, level / 2.0);
        let hi = quantile_sorted(&boots, 1.0 - level / 2.0);
        let target = psi(lambda);
        let half = 0.5 * (hi - lo);
        let excess = if target < lo {
            (lo - target) / half.max(f64::MIN_POSITIVE)
        } else if target > hi {
            (target - hi) / half.max(f64::MIN_POSITIVE)
        } else {
            0.0
        };
        worst = worst.max(excess);
        if excess > 0.0 {
            report.verdict = Verdict::Fail;
        }
        report.details.push((format!("lambda={lambda}:estimate"), est));
        report.details.push((format!("lambda={lambda}:psi"), target));
        report.details.push((format!("lambda={lambda}:ci_lo"), lo));
        report.details.push((format!("lambda={lambda}:ci_hi"), hi));
        if report.ci.is_none() {
            report.ci = Some((lo, hi));
        }
    }
    report.statistic = worst;
    Ok(report)
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty());
    let pos = q.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < xs.len() {
        xs[i] * (1.0 - f) + xs[i + 1] * f
    } else {
        xs[i]
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

pub fn iqr(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// Spearman correlation between consecutive entries.
pub fn lag1_rank_autocorrelation(xs: &[f64]) -> f64 {
    spearman(&xs[..xs.len() - 1], &xs[1..])
}

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Variance over mean of counts.
pub fn dispersion_index(counts: &[f64]) -> f64 {
    let (m, v) = mean_var(counts);
    v / m
}

/// Two-sided p-value of an observed count under Poisson(mean) via a normal
/// approximation with continuity correction.
pub fn poisson_z(observed: f64, mean: f64) -> f64 {
    let z = ((observed - mean).abs() - 0.5).max(0.0) / mean.sqrt();
    2.0 * (1.0 - norm_cdf(z))
}
