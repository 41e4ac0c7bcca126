use remlab::config::{ExperimentConfig, Suite};
use remlab::experiment::{Experiment, ExperimentError, ReplicaMode};
use remlab::par::Exec;
use remlab::stats::Verdict;
use remlab::suite::{run_suite, trap_samples, Tolerances};

const BASE: &str = "replicas = 30\n[model]\nn = 14\nalpha = 0.6\nabar = 0.5\ncbar = 0.575\ndelta = 0.3\nseed = 21\n";

fn config() -> ExperimentConfig {
    ExperimentConfig::from_toml(BASE).unwrap()
}

#[test]
fn replicas_do_not_depend_on_execution_mode() {
    let mut cfg = config();
    cfg.exec = Exec::Sequential;
    let seq = Experiment::new(&cfg).unwrap().run_replicas(8, ReplicaMode::TRAPS).unwrap();
    cfg.exec = Exec::Parallel;
    let par = Experiment::new(&cfg).unwrap().run_replicas(8, ReplicaMode::TRAPS).unwrap();
    let key = |runs: &[remlab::experiment::ReplicaRun]| {
        runs.iter().map(|r| (r.num_events, r.clock_at_1.to_bits(), r.traps.len())).collect::<Vec<_>>()
    };
    assert_eq!(key(&seq), key(&par));
}

#[test]
fn shared_and_fresh_environments() {
    let mut cfg = config();
    let exp = Experiment::new(&cfg).unwrap();
    let runs = exp.run_replicas(4, ReplicaMode::CLOCK).unwrap();
    assert!(runs.windows(2).all(|w| w[0].env_seed == w[1].env_seed));
    cfg.fresh_env_per_replica = true;
    let runs = Experiment::new(&cfg).unwrap().run_replicas(4, ReplicaMode::CLOCK).unwrap();
    assert!(runs.windows(2).all(|w| w[0].env_seed != w[1].env_seed));
}

#[test]
fn trap_samples_are_consistent() {
    let exp = Experiment::new(&config()).unwrap();
    let runs = exp.run_replicas(30, ReplicaMode::TRAPS).unwrap();
    let s = trap_samples(&runs);
    assert_eq!(s.counts.len(), 30);
    assert_eq!(s.counts.iter().sum::<f64>() as usize, s.spacings.len());
    assert!(s.depths.iter().all(|&d| d >= exp.params.delta));
    assert!(s.spacings.iter().all(|&x| (0.0..=exp.cfg.horizon).contains(&x)));
    for r in &runs {
        let times: Vec<f64> = r.traps.iter().map(|t| t.t_over_tn).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.clock_at_1 <= r.clock_at_horizon + 1e-12);
        // Shallow clock mass grows with the truncation level.
        let mass: Vec<f64> = r.shallow.iter().map(|s| s.1).collect();
        assert!(mass.windows(2).all(|w| w[0] >= w[1]), "{:?}", r.shallow);
    }
}

#[test]
fn limits_suite_passes_at_small_size() {
    let mut cfg = config();
    cfg.suite = Suite::Limits;
    cfg.limits.paths = 2000;
    cfg.limits.bootstrap = 300;
    let out = run_suite(&cfg, &Tolerances::default()).unwrap();
    assert_eq!(out.checks.len(), 1);
    assert_eq!(out.checks[0].id, 10);
    assert!(out.checks[0].passed(), "{}", out.checks[0].summary_line());
    assert_eq!(out.summary.verdict, Verdict::Pass);
}

#[test]
fn budget_guard_refuses_before_running() {
    let mut cfg = config();
    cfg.max_events = 100.0;
    let exp = Experiment::new(&cfg).unwrap();
    assert!(matches!(exp.run_replicas(10, ReplicaMode::CLOCK), Err(ExperimentError::Budget { .. })));
}
