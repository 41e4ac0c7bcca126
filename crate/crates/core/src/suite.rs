//! Verification suites. Each check turns simulations or exact computations
//! into [`TestReport`]s against the limit laws, with the tolerances of
//! [`Tolerances`]; [`run_suite`] wires them to an [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ExperimentConfig, Plan, Suite};
use crate::env::{EnergyField, EnvError, ModelParams, Vertex};
use crate::exactsmall::{
    exit_rate_h2, exit_rate_h2_first_step, identity_defects, spectral_gap, strong_stationary_time,
    time_at_start_before_h2, ExactError, Spectrum, SstPlan,
};
use crate::experiment::{pooled_traps, Experiment, ExperimentError, ReplicaMode, ReplicaRun};
use crate::limitproc::{build_z, clock_levy_const, psi, psi_delta, sample_stable, sample_z_at, LimitError};
use crate::par::map_indexed;
use crate::rngs::{env_seed, stream, STREAM_EXACT, STREAM_EXPLORE, STREAM_LIMIT};
use crate::scales::{shallow_trap_mass, ScaleError};
use crate::special::norm_sf;
use crate::stats::{
    chi_square_gof, chi_square_independence, hill_alpha, iqr, ks_test, lag1_rank_autocorrelation, laplace_compare,
    median, ols_slope, spearman, suite_verdict, two_sample_distance, Reference, StatsError, SuiteSummary, TestReport,
    Verdict,
};
use crate::walk::{run_x, NoObserver, RunOptions, StartMode};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl From<crate::walk::WalkError> for SuiteError {
    fn from(e: crate::walk::WalkError) -> Self {
        SuiteError::Experiment(e.into())
    }
}

/// Every numerical threshold of the suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub level: f64,
    pub identity_rel: f64,
    pub identity_seconds: f64,
    pub gap_min: f64,
    pub gap_slack: f64,
    pub zero_gap_abs: f64,
    pub heat_grid: Vec<f64>,
    pub heat_slack: f64,
    pub annealed_sigmas: f64,
    pub sst_tail_rel: f64,
    pub sst_tail_k: u32,
    pub zero_exit_abs: f64,
    pub exploration_autocorr: f64,
    pub min_trap_events: usize,
    pub rank_corr: f64,
    pub dispersion_band: (f64, f64),
    pub min_green_events: usize,
    pub green_band: (f64, f64),
    pub min_clock_samples: usize,
    pub clock_lambdas: Vec<f64>,
    pub hill_tol: f64,
    pub hill_fraction: f64,
    pub psi_delta: f64,
    pub psi_delta_lambdas: Vec<f64>,
    pub psi_delta_rel: f64,
    pub age_level: f64,
    pub slope_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            level: 0.01,
            identity_rel: 1e-9,
            identity_seconds: 60.0,
            gap_min: 2.0,
            gap_slack: 1e-9,
            zero_gap_abs: 1e-9,
            heat_grid: vec![0.1, 0.2, 0.5, 1.0, 2.0, 3.0, 5.0],
            heat_slack: 1e-12,
            annealed_sigmas: 3.0,
            sst_tail_rel: 0.05,
            sst_tail_k: 4,
            zero_exit_abs: 1e-9,
            exploration_autocorr: 0.05,
            min_trap_events: 200,
            rank_corr: 0.1,
            dispersion_band: (0.7, 1.3),
            min_green_events: 50,
            green_band: (0.7, 1.3),
            min_clock_samples: 500,
            clock_lambdas: vec![0.5, 1.0, 2.0],
            hill_tol: 0.1,
            hill_fraction: 0.1,
            psi_delta: 1e-4,
            psi_delta_lambdas: vec![0.25, 0.5, 1.0],
            psi_delta_rel: 0.02,
            age_level: 0.001,
            slope_tol: 0.15,
        }
    }
}

/// One numbered acceptance check with its reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub id: u32,
    pub title: String,
    pub reports: Vec<TestReport>,
    pub seconds: f64,
}

impl Check {
    fn new(id: u32, title: &str) -> Check {
        Check { id, title: title.to_string(), reports: Vec::new(), seconds: 0.0 }
    }

    pub fn passed(&self) -> bool {
        !self.reports.is_empty() && self.reports.iter().all(TestReport::passed)
    }

    fn push(&mut self, r: TestReport) {
        self.reports.push(r);
    }

    /// One line: `PASS|FAIL <id> <title>` followed by failing report names.
    pub fn summary_line(&self) -> String {
        let failing: Vec<&str> = self.reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
        let v = if self.passed() { "PASS" } else { "FAIL" };
        if failing.is_empty() {
            format!("{v} criterion {:>2}: {} ({:.1}s)", self.id, self.title, self.seconds)
        } else {
            format!("{v} criterion {:>2}: {} ({:.1}s) failing: {}", self.id, self.title, self.seconds, failing.join(", "))
        }
    }
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Report for `lo <= statistic <= hi`.
fn within(name: &str, statistic: f64, lo: f64, hi: f64, n: usize) -> TestReport {
    let mut r = TestReport::threshold(name, statistic, hi, n);
    r.verdict = verdict(statistic >= lo && statistic <= hi);
    r.with_detail("lo", lo).with_detail("hi", hi)
}

/// Report for a boolean structural property.
fn holds(name: &str, ok: bool, n: usize) -> TestReport {
    let mut r = TestReport::threshold(name, if ok { 0.0 } else { 1.0 }, 0.0, n);
    r.verdict = verdict(ok);
    r
}

/// Too few samples make a report inconclusive instead of aborting the check.
fn guard(name: &str, r: Result<TestReport, StatsError>) -> Result<TestReport, SuiteError> {
    match r {
        Err(StatsError::TooFewSamples { got, need, .. }) => {
            let mut rep = TestReport::threshold(name, got as f64, need as f64, got);
            rep.verdict = Verdict::Inconclusive;
            Ok(rep.with_detail("needed", need as f64))
        }
        Err(StatsError::BadK { k, n }) => {
            let mut rep = TestReport::threshold(name, n as f64, k as f64, n);
            rep.verdict = Verdict::Inconclusive;
            Ok(rep)
        }
        other => Ok(other?),
    }
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn exact_params(n: u32, cfg: &ExperimentConfig, seed: u64) -> ModelParams {
    let base = cfg.params();
    let mut p = ModelParams::with_derived_a(n, base.beta, base.abar, base.cbar, base.delta, seed);
    if let Some(a) = cfg.model.a {
        p.a = a;
    }
    p
}

fn exact_field(n: u32, i: usize, cfg: &ExperimentConfig) -> Result<EnergyField, SuiteError> {
    let seed = env_seed(cfg.model.seed, ((n as usize) << 32) | i, true);
    Ok(EnergyField::new(exact_params(n, cfg, seed))?)
}

/// Criterion 1: generator symmetry and row sums, resolvent symmetry and row
/// sums, and the range identity, over random environments.
pub fn check_identities(cfg: &ExperimentConfig, tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(1, "exact identities");
    let t0 = Instant::now();
    let plan = &cfg.plan;
    let mut worst = [0.0f64; 5];
    let mut count = 0;
    for &n in &plan.identity_ns {
        for i in 0..plan.identity_envs {
            let mut f = exact_field(n, i, cfg)?;
            let d = identity_defects(&mut f, (n * n) as f64)?;
            for (w, v) in worst.iter_mut().zip([
                d.generator_asymmetry,
                d.generator_row_sum,
                d.green_asymmetry,
                d.green_row_sum,
                d.range_identity,
            ]) {
                *w = w.max(v);
            }
            count += 1;
        }
    }
    let names = ["generator_symmetry", "generator_row_sums", "green_symmetry", "green_row_sums", "range_identity"];
    for (name, w) in names.iter().zip(worst) {
        c.push(TestReport::threshold(&format!("c1.{name}"), w, tol.identity_rel, count));
    }
    let secs = t0.elapsed().as_secs_f64();
    c.push(TestReport::threshold("c1.runtime_seconds", secs, tol.identity_seconds, count));
    c.seconds = secs;
    Ok(c)
}

/// Criterion 2: gap at least 2 in random environments, exactly 2 without disorder.
pub fn check_gaps(cfg: &ExperimentConfig, tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(2, "spectral gap");
    let t0 = Instant::now();
    let plan = &cfg.plan;
    let mut min_gap = f64::INFINITY;
    let mut zero_dev = 0.0f64;
    for &n in &plan.gap_ns {
        for i in 0..plan.gap_envs {
            let mut f = exact_field(n, i, cfg)?;
            min_gap = min_gap.min(spectral_gap(&mut f)?);
        }
        let mut z = EnergyField::zero_disorder(exact_params(n, cfg, 0))?;
        zero_dev = zero_dev.max((spectral_gap(&mut z)? - 2.0).abs());
    }
    let total = plan.gap_ns.len() * plan.gap_envs;
    let mut r = TestReport::threshold("c2.min_gap", -min_gap, -(tol.gap_min - tol.gap_slack), total);
    r.statistic = min_gap;
    c.push(r.with_detail("min_gap", min_gap));
    c.push(TestReport::threshold("c2.zero_disorder_gap_minus_2", zero_dev, tol.zero_gap_abs, plan.gap_ns.len()));
    c.seconds = t0.elapsed().as_secs_f64();
    Ok(c)
}

/// Criterion 3: `|P_x[X_t = y] - 2^{-N}| <= e^{-2t}` everywhere on the grid,
/// and the annealed return probability below `((1 + e^{-2t})/2)^N`.
pub fn check_heat_kernel(cfg: &ExperimentConfig, tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(3, "heat-kernel bounds");
    let t0 = Instant::now();
    let plan = &cfg.plan;
    let n = plan.heat_n;
    let u = (-(n as f64) * std::f64::consts::LN_2).exp();
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..plan.heat_bound_envs {
        let spec = Spectrum::new(&crate::exactsmall::generator(&mut exact_field(n, i, cfg)?)?)?;
        for &t in &tol.heat_grid {
            let p = spec.heat_kernel(t)?;
            let bound = (-2.0 * t).exp();
            for v in p.iter() {
                let excess = (v - u).abs() - bound;
                worst = worst.max(excess);
                if excess > tol.heat_slack {
                    violations += 1;
                }
            }
        }
    }
    c.push(
        TestReport::threshold("c3.uniform_bound_violations", violations as f64, 0.0, plan.heat_bound_envs)
            .with_detail("max_excess", worst),
    );
    let mut diag = vec![Vec::with_capacity(plan.heat_annealed_envs); tol.heat_grid.len()];
    for i in 0..plan.heat_annealed_envs {
        let spec = Spectrum::new(&crate::exactsmall::generator(&mut exact_field(n, 1_000_000 + i, cfg)?)?)?;
        for (k, &t) in tol.heat_grid.iter().enumerate() {
            diag[k].push(spec.heat_kernel_entry(0, 0, t)?);
        }
    }
    let mut worst_z = f64::NEG_INFINITY;
    let mut ok = true;
    let mut r = TestReport::threshold("c3.annealed_diagonal", 0.0, tol.annealed_sigmas, plan.heat_annealed_envs);
    for (k, &t) in tol.heat_grid.iter().enumerate() {
        let e = crate::scales::Estimate::from_samples(&diag[k]);
        let bound = ((1.0 + (-2.0 * t).exp()) / 2.0).powi(n as i32);
        let z = (e.mean - bound) / e.stderr.max(f64::MIN_POSITIVE);
        worst_z = worst_z.max(z);
        ok &= e.mean <= bound + tol.annealed_sigmas * e.stderr;
        r = r.with_detail(&format!("t={t}:mean"), e.mean).with_detail(&format!("t={t}:bound"), bound);
    }
    r.statistic = worst_z;
    r.verdict = verdict(ok);
    c.push(r);
    c.seconds = t0.elapsed().as_secs_f64();
    Ok(c)
}

/// Criterion 4: the strong stationary time has a uniform terminal state,
/// geometric block count with ratio `1/e`, and is independent of its state.
pub fn check_sst(cfg: &ExperimentConfig, tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(4, "strong stationary time");
    let t0 = Instant::now();
    let plan = &cfg.plan;
    let level = cfg.level;
    for &n in &plan.sst_ns {
        let mut f = exact_field(n, 2_000_000, cfg)?;
        let spec = Spectrum::new(&crate::exactsmall::generator(&mut f)?)?;
        let sst = SstPlan::search(&spec, n)?;
        let size = 1usize << n;
        let mut rng = stream(cfg.model.seed, STREAM_EXACT | (n as u64) << 40);
        let kmax = tol.sst_tail_k as usize;
        let cols = size.min(8);
        let mut cells = vec![0.0; size];
        let mut tail = vec![0usize; kmax + 1];
        let mut table = vec![vec![0.0; cols]; kmax];
        for _ in 0..plan.sst_runs {
            let (t, x) = strong_stationary_time(&sst, Vertex(0), &mut rng);
            let k = (t / sst.block).round() as usize;
            cells[x.index()] += 1.0;
            for (j, slot) in tail.iter_mut().enumerate().skip(1) {
                if k >= j {
                    *slot += 1;
                }
            }
            table[k.min(kmax) - 1][x.index() % cols] += 1.0;
        }
        let expect = vec![plan.sst_runs as f64 / size as f64; size];
        c.push(chi_square_gof(&format!("c4.n{n}.terminal_uniform"), &cells, &expect, level)?.with_detail("block", sst.block));
        let mut worst = 0.0f64;
        let mut r = TestReport::threshold(&format!("c4.n{n}.tail_geometric"), 0.0, tol.sst_tail_rel, plan.sst_runs);
        for (k, &cnt) in tail.iter().enumerate().skip(1) {
            let emp = cnt as f64 / plan.sst_runs as f64;
            let exp = (-(k as f64 - 1.0)).exp();
            let rel = (emp - exp).abs() / exp;
            worst = worst.max(rel);
            r = r.with_detail(&format!("k={k}:empirical"), emp).with_detail(&format!("k={k}:expected"), exp);
        }
        r.statistic = worst;
        r.verdict = verdict(worst < tol.sst_tail_rel);
        c.push(r);
        c.push(chi_square_independence(&format!("c4.n{n}.independence"), &table, level)?);
    }
    c.seconds = t0.elapsed().as_secs_f64();
    Ok(c)
}

/// Criterion 5: time at the start before distance 2 is exponential with the
/// closed-form rate, which equals `N - 1` without disorder.
pub fn check_exit_rate(cfg: &ExperimentConfig, tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(5, "exit rate before distance 2");
    let t0 = Instant::now();
    let plan = &cfg.plan;
    let n = plan.exit_n;
    let mut f = exact_field(n, 3_000_000, cfg)?;
    let x = Vertex(0);
    let rate = exit_rate_h2(&mut f, x)?;
    let exact = exit_rate_h2_first_step(&mut f, x)?;
    let mut rng = stream(cfg.model.seed, STREAM_EXACT | 1 << 50);
    let xs: Vec<f64> = (0..plan.exit_runs).map(|_| time_at_start_before_h2(&mut f, x, &mut rng)).collect();
    let exact_ks = ks_test("exact", &xs, &Reference::Exponential { rate: exact }, cfg.level)?;
    c.push(
        ks_test("c5.ks_closed_form_rate", &xs, &Reference::Exponential { rate }, cfg.level)?
            .with_detail("closed_form_rate", rate)
            .with_detail("first_step_rate", exact)
            .with_detail("first_step_ks_p", exact_ks.p_value.unwrap_or(f64::NAN)),
    );
    let mut dev = 0.0f64;
    for m in 2..=8 {
        let mut z = EnergyField::zero_disorder(exact_params(m, cfg, 0))?;
        dev = dev.max((exit_rate_h2(&mut z, x)? - (m as f64 - 1.0)).abs());
    }
    c.push(TestReport::threshold("c5.zero_disorder_rate_minus_n_minus_1", dev, tol.zero_exit_abs, 7));
    c.seconds = t0.elapsed().as_secs_f64();
    Ok(c)
}

/// Criterion 6: energies in exploration order are i.i.d. positive Gaussians.
pub fn check_exploration(exp: &Experiment, tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(6, "exploration i.i.d.");
    let t0 = Instant::now();
    let count = exp.cfg.plan.exploration_count;
    let mut field = exp.field(0)?;
    let mut horizon = count as f64 / (exp.params.n as f64 * exp.scales.clock_factor).max(1.0);
    let order = loop {
        let opts = RunOptions::until(horizon).summaries_only();
        let (_, log) = run_x(&mut field, StartMode::Uniform, opts, &mut stream(exp.params.seed, STREAM_EXPLORE), &mut NoObserver)?;
        if log.order.len() >= count {
            break log.order;
        }
        horizon *= 2.0;
    };
    let es: Vec<f64> = order[..count].iter().map(|&x| field.energy(x)).collect();
    let positive: Vec<f64> = es.iter().copied().filter(|&e| e > 0.0).collect();
    c.push(ks_test("c6.ks_positive_part", &positive, &Reference::HalfGaussian, exp.cfg.level)?);
    let zeros = (count - positive.len()) as f64;
    let z = (zeros - count as f64 / 2.0) / (count as f64 / 4.0).sqrt();
    let p = 2.0 * norm_sf(z.abs());
    let mut atom = TestReport::threshold("c6.atom_at_zero", z.abs(), f64::INFINITY, count).with_detail("zero_fraction", zeros / count as f64);
    atom.p_value = Some(p);
    atom.verdict = verdict(p >= exp.cfg.level);
    c.push(atom);
    let rho = lag1_rank_autocorrelation(&es);
    c.push(TestReport::threshold("c6.lag1_rank_autocorrelation", rho.abs(), tol.exploration_autocorr, count));
    c.seconds = t0.elapsed().as_secs_f64();
    Ok(c)
}

/// Spacings, depths and marks of the pooled deep traps.
pub struct TrapSamples {
    pub spacings: Vec<f64>,
    pub depths: Vec<f64>,
    /// `(spacing, depth, e_mark)` for traps visited before the horizon.
    pub triples: Vec<(f64, f64, f64)>,
    /// Raw Green estimates `G(x, x)` where available.
    pub greens: Vec<f64>,
    /// Number of traps per replica.
    pub counts: Vec<f64>,
}

pub fn trap_samples(runs: &[ReplicaRun]) -> TrapSamples {
    let pool = pooled_traps(runs);
    TrapSamples {
        spacings: pool.iter().map(|p| p.1).collect(),
        depths: pool.iter().map(|p| p.2.depth_over_b).collect(),
        triples: pool.iter().filter_map(|p| p.2.e_mark.map(|e| (p.1, p.2.depth_over_b, e))).collect(),
        greens: pool.iter().filter_map(|p| p.2.green).collect(),
        counts: runs.iter().map(|r| r.traps.len() as f64).collect(),
    }
}

/// Criterion 7: Poisson arrivals of intensity `delta^{-alpha}`, Pareto depths,
/// exponential marks, and independence of the three.
pub fn check_traps(exp: &Experiment, runs: &[ReplicaRun], tol: &Tolerances) -> Result<Check, SuiteError> {
    let law = TrapLaw { alpha: exp.params.alpha(), delta: exp.params.delta, horizon: exp.cfg.horizon, level: exp.cfg.level };
    check_trap_samples(&trap_samples(runs), &law, tol)
}

/// Parameters of the deep-trap limit law.
#[derive(Debug, Clone, Copy)]
pub struct TrapLaw {
    pub alpha: f64,
    pub delta: f64,
    /// Observation window in units of `t_N`.
    pub horizon: f64,
    pub level: f64,
}

pub fn check_trap_samples(s: &TrapSamples, law: &TrapLaw, tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(7, "deep-trap statistics");
    let t0 = Instant::now();
    let TrapLaw { alpha, delta, horizon, level } = *law;
    let rate = delta.powf(-alpha);
    let n = s.spacings.len();
    let mut count = TestReport::threshold("c7.pooled_events", -(n as f64), -(tol.min_trap_events as f64), n);
    count.statistic = n as f64;
    c.push(count);
    let windowed = |r: f64| Reference::WindowedExponential { rate: r, window: horizon };
    let mut spacing = guard("c7.spacings", ks_test("c7.spacings", &s.spacings, &windowed(rate), level))?
        .with_detail("rate", rate);
    if spacing.p_value.is_some() {
        let plain = ks_test("plain", &s.spacings, &Reference::Exponential { rate }, level)?;
        let observed = n as f64 / (s.counts.len() as f64 * horizon);
        let at_observed = ks_test("observed", &s.spacings, &windowed(observed), level)?;
        spacing = spacing
            .with_detail("observed_rate", observed)
            .with_detail("observed_rate_ks_p", at_observed.p_value.unwrap_or(f64::NAN))
            .with_detail("uncensored_exponential_ks", plain.statistic);
    }
    c.push(spacing);
    c.push(guard("c7.depths", ks_test("c7.depths", &s.depths, &Reference::ParetoTail { alpha, delta }, level))?);
    let marks: Vec<f64> = s.triples.iter().map(|t| t.2).collect();
    c.push(guard("c7.e_marks", ks_test("c7.e_marks", &marks, &Reference::Exponential { rate: 1.0 }, level))?);
    let cols: [Vec<f64>; 3] = [
        s.triples.iter().map(|t| t.0).collect(),
        s.triples.iter().map(|t| t.1).collect(),
        s.triples.iter().map(|t| t.2).collect(),
    ];
    let names = ["spacing", "depth", "e_mark"];
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let rho = spearman(&cols[i], &cols[j]);
        c.push(
            TestReport::threshold(&format!("c7.rank_corr.{}_{}", names[i], names[j]), rho.abs(), tol.rank_corr, s.triples.len())
                .with_detail("rho", rho),
        );
    }
    c.seconds = t0.elapsed().as_secs_f64();
    Ok(c)
}

/// Deep-trap count dispersion (variance over mean) per replica.
pub fn dispersion_report(s: &TrapSamples, tol: &Tolerances) -> TestReport {
    let d = crate::stats::dispersion_index(&s.counts);
    within("traps.dispersion_index", d, tol.dispersion_band.0, tol.dispersion_band.1, s.counts.len())
}

/// `N^2 phi(a)^2 G` at every detected trap.
pub fn normalised_greens(exp: &Experiment, runs: &[ReplicaRun]) -> Vec<f64> {
    runs.iter().flat_map(|r| r.traps.iter().filter_map(|t| t.green)).map(|g| g * exp.scales.clock_factor).collect()
}

/// Criterion 8: `N^2 phi(a)^2 G` at deep traps concentrates near 1 at the
/// largest `N`, with interquartile range shrinking in `N`.
pub fn check_green(by_n: &[(u32, Vec<f64>)], tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(8, "Green concentration");
    let (n_max, last) = by_n.last().expect("at least one N");
    let mut count = TestReport::threshold("c8.events", -(last.len() as f64), -(tol.min_green_events as f64), last.len());
    count.statistic = last.len() as f64;
    c.push(count);
    c.push(within(&format!("c8.median_n{n_max}"), median(last), tol.green_band.0, tol.green_band.1, last.len()));
    let iqrs: Vec<f64> = by_n.iter().map(|(_, g)| iqr(g)).collect();
    let mut trend = holds("c8.iqr_decreasing", strictly_decreasing(&iqrs), by_n.len());
    for ((n, g), q) in by_n.iter().zip(&iqrs) {
        trend = trend.with_detail(&format!("n={n}:iqr"), *q).with_detail(&format!("n={n}:median"), median(g));
    }
    c.push(trend);
    Ok(c)
}

/// Criterion 9: Laplace exponent and tail index of `C_N(1)`.
pub fn check_clock(exp: &Experiment, runs: &[ReplicaRun], tol: &Tolerances) -> Result<Check, SuiteError> {
    let xs: Vec<f64> = runs.iter().map(|r| r.clock_at_1).collect();
    check_clock_samples(&xs, exp.params.alpha(), &exp.cfg, tol)
}

/// Criterion 9 on given samples of `C_N(1)`.
pub fn check_clock_samples(xs: &[f64], alpha: f64, cfg: &ExperimentConfig, tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(9, "clock limit");
    let t0 = Instant::now();
    let k = cfg.limits.levy_const.unwrap_or_else(|| clock_levy_const(alpha));
    let mut count = TestReport::threshold("c9.samples", -(xs.len() as f64), -(tol.min_clock_samples as f64), xs.len());
    count.statistic = xs.len() as f64;
    c.push(count);
    let lap = laplace_compare("c9.laplace", xs, |l| psi(alpha, k, l), &tol.clock_lambdas, cfg.limits.bootstrap, cfg.level, cfg.model.seed);
    c.push(guard("c9.laplace", lap)?);
    let kk = ((xs.len() as f64 * tol.hill_fraction) as usize).max(1);
    let hill = hill_alpha(xs, kk).map(|h| {
        within("c9.hill_tail_index", h.alpha, alpha - tol.hill_tol, alpha + tol.hill_tol, xs.len())
            .with_detail("k", kk as f64)
            .with_detail("ci_lo", h.ci.0)
            .with_detail("ci_hi", h.ci.1)
    });
    c.push(guard("c9.hill_tail_index", hill)?);
    c.seconds = t0.elapsed().as_secs_f64();
    Ok(c)
}

/// Criterion 10: self-consistency of the limit-process engine.
pub fn check_limits(alpha: f64, cfg: &ExperimentConfig, tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(10, "limit-process engine");
    let t0 = Instant::now();
    let lim = &cfg.limits;
    let k = lim.levy_const.unwrap_or_else(|| clock_levy_const(alpha));
    let seed = cfg.model.seed;
    let paths = map_indexed(cfg.exec, lim.paths, |i| {
        sample_stable(alpha, 1.0, lim.eps, k, &mut stream(seed, STREAM_LIMIT | i as u64)).map(|p| p.value(1.0))
    })
    .into_iter()
    .collect::<Result<Vec<f64>, _>>()?;
    c.push(laplace_compare("c10.stable_laplace", &paths, |l| psi(alpha, k, l), &tol.clock_lambdas, lim.bootstrap, cfg.level, seed ^ 1)?);
    let mut worst = 0.0f64;
    let mut r = TestReport::threshold("c10.psi_delta_rel_error", 0.0, tol.psi_delta_rel, tol.psi_delta_lambdas.len());
    for &l in &tol.psi_delta_lambdas {
        let full = psi(alpha, clock_levy_const(alpha), l);
        let rel = (psi_delta(alpha, tol.psi_delta, l)? - full).abs() / full;
        worst = worst.max(rel);
        r = r.with_detail(&format!("lambda={l}"), rel);
    }
    r.statistic = worst;
    r.verdict = verdict(worst < tol.psi_delta_rel);
    c.push(r);
    let mut rng = stream(seed, STREAM_LIMIT | 1 << 40);
    let z1: Vec<f64> = (0..lim.paths).map(|_| sample_z_at(alpha, 1.0, lim.eps, k, &mut rng)).collect::<Result<_, _>>()?;
    let z2: Vec<f64> =
        (0..lim.paths).map(|_| sample_z_at(alpha, 2.0, lim.eps, k, &mut rng).map(|z| z / 2.0)).collect::<Result<_, _>>()?;
    c.push(ks_test("c10.z_self_similarity", &z2, &Reference::Empirical(z1), cfg.level)?);
    // Z^(delta) is, by construction, the sequence of jumps above delta held for size * mark.
    let delta = cfg.model.delta;
    let mut defects = 0usize;
    let mut checked = 0usize;
    for i in 0..100u64 {
        let p = sample_stable(alpha, 5.0, 1e-3, k, &mut stream(seed, STREAM_LIMIT | 2 << 40 | i))?;
        let z = build_z(&p, f64::INFINITY, Some(delta))?;
        let big: Vec<_> = p.jumps.iter().filter(|j| j.size > delta).collect();
        defects += (z.holdings.len() != big.len()) as usize;
        let mut level = 0.0;
        for (h, j) in z.holdings.iter().zip(&big) {
            defects += (h.size != j.size || h.hold != j.size * j.mark || h.start != level) as usize;
            level += h.hold;
            checked += 1;
        }
    }
    c.push(TestReport::threshold("c10.z_delta_structure_defects", defects as f64, 0.0, checked));
    c.seconds = t0.elapsed().as_secs_f64();
    Ok(c)
}

/// Samples of `Z_1` from the limit engine.
pub fn z_samples(alpha: f64, cfg: &ExperimentConfig) -> Result<Vec<f64>, SuiteError> {
    let k = cfg.limits.levy_const.unwrap_or_else(|| clock_levy_const(alpha));
    let mut rng = stream(cfg.model.seed, STREAM_LIMIT | 3 << 40);
    Ok((0..cfg.plan.z_samples).map(|_| sample_z_at(alpha, 1.0, cfg.limits.eps, k, &mut rng)).collect::<Result<_, _>>()?)
}

/// Criterion 11: the KS distance between `A_N(1)` and `Z_1` decreases in `N`.
pub fn check_age(by_n: &[(u32, Vec<f64>)], z: &[f64], tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(11, "age trend");
    let dists: Vec<f64> = by_n.iter().map(|(_, a)| two_sample_distance(a, z)).collect();
    let mut trend = holds("c11.distance_decreasing", strictly_decreasing(&dists), by_n.len());
    for ((n, a), d) in by_n.iter().zip(&dists) {
        trend = trend.with_detail(&format!("n={n}:distance"), *d).with_detail(&format!("n={n}:median"), median(a));
    }
    c.push(trend);
    if let Some((n, a)) = by_n.last() {
        let mut r = ks_test(&format!("c11.ks_n{n}_loose"), a, &Reference::Empirical(z.to_vec()), tol.age_level)?;
        // Informational: the criterion itself is the trend.
        r.verdict = Verdict::Pass;
        c.push(r.with_detail("informational", 1.0));
    }
    Ok(c)
}

/// Criterion 12: measured shallow clock mass shrinks with `delta`, and its
/// quadrature scales like `delta^{1 - alpha}`.
pub fn check_shallow(exp: &Experiment, runs: &[ReplicaRun], tol: &Tolerances) -> Result<Check, SuiteError> {
    let mut c = Check::new(12, "shallow-trap negligibility");
    let mut grid = exp.cfg.delta_grid.clone();
    grid.sort_by(|a, b| b.total_cmp(a));
    let mut means = Vec::new();
    let mut r = holds("c12.measured_decreasing", true, runs.len());
    for &d in &grid {
        let vals: Vec<f64> =
            runs.iter().filter_map(|run| run.shallow.iter().find(|(x, _)| *x == d).map(|(_, v)| *v)).collect();
        let m = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        r = r.with_detail(&format!("delta={d}:mean_sup_gap"), m);
        means.push(m);
    }
    r.verdict = verdict(means.len() == grid.len() && strictly_decreasing(&means));
    c.push(r);
    let logs: Vec<f64> = grid.iter().map(|d| d.ln()).collect();
    let masses = grid.iter().map(|&d| shallow_trap_mass(&exp.scales, d)).collect::<Result<Vec<f64>, _>>()?;
    let slope = ols_slope(&logs, &masses.iter().map(|m| m.ln()).collect::<Vec<_>>());
    let alpha = exp.params.alpha();
    c.push(within("c12.quadrature_slope", slope, 1.0 - alpha - tol.slope_tol, 1.0 - alpha + tol.slope_tol, grid.len()));
    Ok(c)
}

/// Fluctuations of `D_N(t_N)` shrink with `N`.
pub fn lln_trend(by_n: &[(u32, crate::scales::Estimate)]) -> TestReport {
    let cvs: Vec<f64> = by_n.iter().map(|(_, e)| e.stderr * (e.samples as f64).sqrt() / e.mean).collect();
    let mut r = holds("dynamics.d_n_relative_spread_decreasing", strictly_decreasing(&cvs), by_n.len());
    for ((n, _), cv) in by_n.iter().zip(&cvs) {
        r = r.with_detail(&format!("n={n}:cv"), *cv);
    }
    r
}

/// All checks requested by `cfg.suite`, with their merged verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub checks: Vec<Check>,
    pub extra: Vec<TestReport>,
    pub summary: SuiteSummary,
    #[serde(skip)]
    pub data: SuiteData,
}

/// Raw samples behind the reports, for persistence.
#[derive(Debug, Clone, Default)]
pub struct SuiteData {
    pub trap_runs: Vec<ReplicaRun>,
    pub clock_runs: Vec<ReplicaRun>,
    pub ages: Vec<(u32, Vec<f64>)>,
}

impl SuiteOutcome {
    pub fn reports(&self) -> Vec<TestReport> {
        self.checks.iter().flat_map(|c| c.reports.iter().cloned()).chain(self.extra.iter().cloned()).collect()
    }
}

/// Experiments at the trend sizes, built once and shared between checks.
pub struct Workspace<'a> {
    pub cfg: &'a ExperimentConfig,
    pub tol: &'a Tolerances,
    experiments: BTreeMap<u32, Experiment>,
}

impl<'a> Workspace<'a> {
    pub fn new(cfg: &'a ExperimentConfig, tol: &'a Tolerances) -> Self {
        Workspace { cfg, tol, experiments: BTreeMap::new() }
    }

    pub fn experiment(&mut self, n: u32) -> Result<&Experiment, SuiteError> {
        if !self.experiments.contains_key(&n) {
            let e = Experiment::at_n(self.cfg, n)?;
            self.experiments.insert(n, e);
        }
        Ok(&self.experiments[&n])
    }
}

fn plan_ns(plan: &Plan, n: u32) -> Vec<u32> {
    let mut ns: Vec<u32> = plan.trend_ns.iter().copied().filter(|&m| m < n).collect();
    ns.push(n);
    ns
}

pub fn run_suite(cfg: &ExperimentConfig, tol: &Tolerances) -> Result<SuiteOutcome, SuiteError> {
    let mut ws = Workspace::new(cfg, tol);
    let mut checks = Vec::new();
    let mut extra = Vec::new();
    let mut data = SuiteData::default();
    let n = cfg.model.n;
    let want = |s: Suite| cfg.suite.includes(s);
    if want(Suite::Exact) {
        checks.push(check_identities(cfg, tol)?);
        checks.push(check_gaps(cfg, tol)?);
        checks.push(check_heat_kernel(cfg, tol)?);
        checks.push(check_sst(cfg, tol)?);
        checks.push(check_exit_rate(cfg, tol)?);
    }
    if want(Suite::Dynamics) {
        let t0 = Instant::now();
        let mut explore = check_exploration(ws.experiment(n)?, tol)?;
        explore.seconds = t0.elapsed().as_secs_f64();
        checks.push(explore);
        let mut est = Vec::new();
        for m in plan_ns(&cfg.plan, n) {
            let e = ws.experiment(m)?;
            let d = match e.scales.d_n_estimate {
                Some(d) => d,
                None => e.estimate_d_n(cfg.d_n_replicas)?,
            };
            est.push((m, d));
        }
        extra.push(lln_trend(&est));
    }
    if want(Suite::Traps) {
        let t0 = Instant::now();
        let mut greens = Vec::new();
        for m in plan_ns(&cfg.plan, n) {
            let e = ws.experiment(m)?;
            let reps = if m == n { cfg.replicas } else { cfg.plan.green_replicas };
            let runs = e.run_replicas(reps, ReplicaMode::TRAPS)?;
            greens.push((m, normalised_greens(e, &runs)));
            if m == n {
                checks.push(check_traps(e, &runs, tol)?);
                extra.push(dispersion_report(&trap_samples(&runs), tol));
                data.trap_runs = runs;
            }
        }
        let mut green = check_green(&greens, tol)?;
        green.seconds = t0.elapsed().as_secs_f64();
        checks.push(green);
    }
    if want(Suite::Clock) {
        let t0 = Instant::now();
        let e = ws.experiment(n)?;
        let runs = e.run_replicas(cfg.plan.clock_replicas, ReplicaMode::CLOCK)?;
        let mut clock = check_clock(e, &runs, tol)?;
        clock.seconds = t0.elapsed().as_secs_f64();
        checks.push(clock);
        checks.push(check_shallow(e, &runs, tol)?);
        data.clock_runs = runs;
    }
    if want(Suite::Limits) {
        checks.push(check_limits(cfg.params().alpha(), cfg, tol)?);
    }
    if want(Suite::Age) {
        let t0 = Instant::now();
        let z = z_samples(cfg.params().alpha(), cfg)?;
        let mut ages = Vec::new();
        for m in plan_ns(&cfg.plan, n) {
            ages.push((m, ws.experiment(m)?.age_samples(cfg.plan.age_samples, 1.0)?));
        }
        let mut age = check_age(&ages, &z, tol)?;
        age.seconds = t0.elapsed().as_secs_f64();
        checks.push(age);
        data.ages = ages;
    }
    checks.sort_by_key(|c| c.id);
    let all: Vec<TestReport> = checks.iter().flat_map(|c| c.reports.iter().cloned()).chain(extra.iter().cloned()).collect();
    let summary = suite_verdict(&all);
    Ok(SuiteOutcome { checks, extra, summary, data })
}
