use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use remlab::config::{ExperimentConfig, Manifest, Suite};
use remlab::experiment::{Experiment, ReplicaMode};
use remlab::io;
use remlab::limitproc::{clock_levy_const, psi, psi_delta, sample_stable};
use remlab::par::{map_indexed, Exec};
use remlab::rngs::{stream, STREAM_LIMIT};
use remlab::stats::{empirical_laplace_exponent, suite_verdict, SuiteSummary, TestReport, Verdict};
use remlab::suite::{self, Check, Tolerances, TrapLaw};

#[derive(Parser)]
#[command(name = "remlab", version, about = "REM aging dynamics on the hypercube")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Overrides applied on top of the TOML config.
#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<u32>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    abar: Option<f64>,
    #[arg(long, global = true)]
    a: Option<f64>,
    #[arg(long, global = true)]
    cbar: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    suite: Option<SuiteArg>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    delta_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    fresh_env_per_replica: bool,
    #[arg(long, global = true)]
    level: Option<f64>,
    #[arg(long, global = true)]
    max_events: Option<f64>,
    #[arg(long, global = true)]
    sequential: bool,
    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Exact,
    Dynamics,
    Traps,
    Clock,
    Age,
    Limits,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Suite {
        match s {
            SuiteArg::Exact => Suite::Exact,
            SuiteArg::Dynamics => Suite::Dynamics,
            SuiteArg::Traps => Suite::Traps,
            SuiteArg::Clock => Suite::Clock,
            SuiteArg::Age => Suite::Age,
            SuiteArg::Limits => Suite::Limits,
            SuiteArg::All => Suite::All,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the scale set as JSON.
    Scales,
    /// Simulate one replica and write its trajectory.
    Simulate {
        #[arg(long, default_value_t = 0)]
        replica: usize,
    },
    /// Detect deep traps over all replicas; writes traps.csv and clock.csv.
    Traps,
    /// Exact small-N checks.
    Exact,
    /// Sample limit processes; writes paths and Laplace tables.
    Limits {
        /// Number of paths written to limit_paths.csv.
        #[arg(long, default_value_t = 20)]
        write_paths: usize,
    },
    /// Re-run the statistics on traps.csv / clock.csv from an earlier run.
    Analyze {
        #[arg(long)]
        traps: Option<PathBuf>,
        #[arg(long)]
        clock: Option<PathBuf>,
    },
    /// Run the configured suite and write every artifact.
    Report,
}

const BASE: &str = "[model]\nn = 16\nalpha = 0.6\nabar = 0.5\ncbar = 0.575\ndelta = 0.3\nseed = 1\n";

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => BASE.to_string(),
    };
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    let m = &mut cfg.model;
    if let Some(v) = args.n {
        m.n = v;
    }
    if let Some(v) = args.alpha {
        m.alpha = Some(v);
        m.beta = None;
    }
    if let Some(v) = args.beta {
        m.beta = Some(v);
        m.alpha = None;
    }
    if let Some(v) = args.abar {
        m.abar = v;
    }
    if args.a.is_some() {
        m.a = args.a;
    }
    if let Some(v) = args.cbar {
        m.cbar = v;
    }
    if let Some(v) = args.delta {
        m.delta = v;
    }
    if let Some(v) = args.seed {
        m.seed = v;
    }
    if let Some(v) = args.suite {
        cfg.suite = v.into();
    }
    if let Some(v) = args.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = args.replicas {
        cfg.replicas = v;
    }
    if let Some(v) = &args.delta_grid {
        cfg.delta_grid = v.clone();
    }
    cfg.fresh_env_per_replica |= args.fresh_env_per_replica;
    if let Some(v) = args.level {
        cfg.level = v;
    }
    if let Some(v) = args.max_events {
        cfg.max_events = v;
    }
    if args.sequential {
        cfg.exec = Exec::Sequential;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let d = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    Ok(d)
}

fn write_manifest(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let m = Manifest::new(cfg)?;
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    io::write_json(&dir.join("manifest.json"), &m)?;
    Ok(())
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        eprintln!("{}", c.summary_line());
    }
}

/// Writes `name.json` with checks and summary, and returns the verdict.
fn finish(dir: &Path, name: &str, checks: Vec<Check>, extra: Vec<TestReport>) -> Result<Verdict> {
    print_checks(&checks);
    let all: Vec<TestReport> = checks.iter().flat_map(|c| c.reports.iter().cloned()).chain(extra.iter().cloned()).collect();
    let summary = suite_verdict(&all);
    report_summary(&summary);
    io::write_json(&dir.join(format!("{name}.json")), &json!({ "checks": checks, "extra": extra, "summary": summary }))?;
    Ok(summary.verdict)
}

/// Prints to stdout, tolerating a closed pipe.
fn emit(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn report_summary(s: &SuiteSummary) {
    eprintln!("verdict {:?}: {} passed, {} failed, {} inconclusive", s.verdict, s.passed, s.failed, s.inconclusive);
}

fn run(cli: Cli) -> Result<Verdict> {
    let cfg = load(&cli.run)?;
    let tol = Tolerances { level: cfg.level, ..Tolerances::default() };
    match cli.cmd {
        Cmd::Scales => {
            let exp = Experiment::new(&cfg)?;
            emit(&serde_json::to_value(&exp.scales)?)?;
            Ok(Verdict::Pass)
        }
        Cmd::Simulate { replica } => {
            let dir = out_dir(&cfg)?;
            write_manifest(&cfg, &dir)?;
            let exp = Experiment::new(&cfg)?;
            let run = exp.run_replica(replica, ReplicaMode { traps: true, keep_record: true })?;
            let rec = run.record.as_ref().context("trajectory was not recorded")?;
            io::write_trajectory(&dir.join("trajectory.csv"), rec)?;
            io::write_traps(&dir.join("traps.csv"), std::slice::from_ref(&run))?;
            io::write_clock(&dir.join("clock.csv"), std::slice::from_ref(&run))?;
            emit(&json!({
                "replica": replica,
                "events": run.num_events,
                "traps": run.traps.len(),
                "clock_at_1": run.clock_at_1,
                "clock_at_horizon": run.clock_at_horizon,
                "counts_at_tn": run.counts_at_tn,
            }))?;
            Ok(Verdict::Pass)
        }
        Cmd::Traps => {
            let dir = out_dir(&cfg)?;
            write_manifest(&cfg, &dir)?;
            let exp = Experiment::new(&cfg)?;
            let runs = exp.run_replicas(cfg.replicas, ReplicaMode::TRAPS)?;
            io::write_traps(&dir.join("traps.csv"), &runs)?;
            io::write_clock(&dir.join("clock.csv"), &runs)?;
            let samples = suite::trap_samples(&runs);
            let checks = vec![suite::check_traps(&exp, &runs, &tol)?];
            let extra = vec![suite::dispersion_report(&samples, &tol)];
            finish(&dir, "traps_report", checks, extra)
        }
        Cmd::Exact => {
            let dir = out_dir(&cfg)?;
            write_manifest(&cfg, &dir)?;
            let checks = vec![
                suite::check_identities(&cfg, &tol)?,
                suite::check_gaps(&cfg, &tol)?,
                suite::check_heat_kernel(&cfg, &tol)?,
                suite::check_sst(&cfg, &tol)?,
                suite::check_exit_rate(&cfg, &tol)?,
            ];
            finish(&dir, "exact_report", checks, Vec::new())
        }
        Cmd::Limits { write_paths } => {
            let dir = out_dir(&cfg)?;
            write_manifest(&cfg, &dir)?;
            let alpha = cfg.params().alpha();
            let k = cfg.limits.levy_const.unwrap_or_else(|| clock_levy_const(alpha));
            let (eps, seed) = (cfg.limits.eps, cfg.model.seed);
            let paths = map_indexed(cfg.exec, write_paths, |i| {
                sample_stable(alpha, 1.0, eps, k, &mut stream(seed, STREAM_LIMIT | 4 << 40 | i as u64))
                    .map(|p| p.jumps.iter().map(|j| (j.loc, p.value(j.loc))).collect::<Vec<_>>())
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            io::write_paths(&dir.join("limit_paths.csv"), &paths)?;
            let values = map_indexed(cfg.exec, cfg.limits.paths, |i| {
                sample_stable(alpha, 1.0, eps, k, &mut stream(seed, STREAM_LIMIT | i as u64)).map(|p| p.value(1.0))
            })
            .into_iter()
            .collect::<Result<Vec<f64>, _>>()?;
            let rows = cfg
                .limits
                .lambdas
                .iter()
                .map(|&l| {
                    Ok(io::LaplaceRow {
                        lambda: l,
                        psi: psi(alpha, k, l),
                        psi_delta: psi_delta(alpha, cfg.model.delta, l)?,
                        empirical: empirical_laplace_exponent(&values, l),
                    })
                })
                .collect::<Result<Vec<_>, remlab::limitproc::LimitError>>()?;
            io::write_laplace(&dir.join("laplace.csv"), &rows)?;
            finish(&dir, "limits_report", vec![suite::check_limits(alpha, &cfg, &tol)?], Vec::new())
        }
        Cmd::Analyze { traps, clock } => {
            if traps.is_none() && clock.is_none() {
                bail!("analyze needs --traps and/or --clock");
            }
            let dir = out_dir(&cfg)?;
            let p = cfg.params();
            let mut checks = Vec::new();
            let mut extra = Vec::new();
            if let Some(t) = traps {
                let s = io::read_traps(&t, cfg.replicas)?;
                let law = TrapLaw { alpha: p.alpha(), delta: p.delta, horizon: cfg.horizon, level: cfg.level };
                checks.push(suite::check_trap_samples(&s, &law, &tol)?);
                extra.push(suite::dispersion_report(&s, &tol));
            }
            if let Some(c) = clock {
                let xs = io::read_clock(&c)?;
                checks.push(suite::check_clock_samples(&xs, p.alpha(), &cfg, &tol)?);
            }
            finish(&dir, "analysis", checks, extra)
        }
        Cmd::Report => {
            let dir = out_dir(&cfg)?;
            write_manifest(&cfg, &dir)?;
            let outcome = suite::run_suite(&cfg, &tol)?;
            let d = &outcome.data;
            if !d.trap_runs.is_empty() {
                io::write_traps(&dir.join("traps.csv"), &d.trap_runs)?;
            }
            if !d.clock_runs.is_empty() {
                io::write_clock(&dir.join("clock.csv"), &d.clock_runs)?;
            }
            if !d.ages.is_empty() {
                io::write_age(&dir.join("age.csv"), &d.ages)?;
            }
            print_checks(&outcome.checks);
            report_summary(&outcome.summary);
            io::write_json(&dir.join("report.json"), &outcome)?;
            Ok(outcome.summary.verdict)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Ok(Verdict::Inconclusive) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
