use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
replicas = 12
delta_grid = [0.5, 0.2]

[model]
n = 12
alpha = 0.6
abar = 0.5
cbar = 0.575
delta = 0.3
seed = 5

[plan]
identity_ns = [4]
identity_envs = 3
gap_ns = [3, 4]
gap_envs = 3
heat_n = 4
heat_bound_envs = 2
heat_annealed_envs = 30
sst_ns = [3]
sst_runs = 20000
exit_n = 4
exit_runs = 2000
trend_ns = [10]
green_replicas = 8
clock_replicas = 120
age_samples = 60
z_samples = 200

[limits]
paths = 300
bootstrap = 100
"#;

fn remlab(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.toml");
    if !cfg.exists() {
        std::fs::write(&cfg, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_remlab"))
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .output()
        .expect("spawn remlab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn scales_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = remlab(dir.path(), &["scales"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n"], 12);
    assert!(v["t_n"].as_f64().unwrap() > 0.0);
}

#[test]
fn exact_suite_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exact");
    let o = remlab(dir.path(), &["-o", out.to_str().unwrap(), "exact"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("exact_report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["verdict"], "pass");
    assert_eq!(report["checks"].as_array().unwrap().len(), 5);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["base_seed"], 5);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn traps_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = remlab(dir.path(), &["-o", out.to_str().unwrap(), "traps"]);
            assert!(matches!(code(&o), 0 | 1), "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    let hash = |d: &Path| {
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("manifest.json")).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    assert_eq!(hash(&runs[0]), hash(&runs[1]));
    for f in ["traps.csv", "clock.csv"] {
        let a = std::fs::read(runs[0].join(f)).unwrap();
        let b = std::fs::read(runs[1].join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs between reruns");
    }
    let header = std::fs::read_to_string(runs[0].join("traps.csv")).unwrap();
    assert!(header.starts_with("replica,rank,site,t_over_tn,spacing,depth_over_b"));
    let clock = std::fs::read_to_string(runs[0].join("clock.csv")).unwrap();
    assert_eq!(clock.lines().count(), 13);

    let sequential = dir.path().join("seq");
    let o = remlab(dir.path(), &["-o", sequential.to_str().unwrap(), "--sequential", "traps"]);
    assert!(matches!(code(&o), 0 | 1));
    assert_eq!(std::fs::read(runs[0].join("traps.csv")).unwrap(), std::fs::read(sequential.join("traps.csv")).unwrap());
    assert_eq!(hash(&runs[0]), hash(&sequential));

    let o = remlab(
        dir.path(),
        &[
            "-o",
            runs[0].to_str().unwrap(),
            "analyze",
            "--traps",
            runs[0].join("traps.csv").to_str().unwrap(),
            "--clock",
            runs[0].join("clock.csv").to_str().unwrap(),
        ],
    );
    assert!(matches!(code(&o), 0 | 1 | 3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(runs[0].join("analysis.json").exists());
}

#[test]
fn simulate_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = remlab(dir.path(), &["-o", out.to_str().unwrap(), "simulate", "--replica", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,site,hold,clock_over_B,discovered_count");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert!(!rows.is_empty());
    for w in rows.windows(2) {
        assert_eq!(w[1][0], w[0][0] + 1.0);
        assert!(w[1][3] >= w[0][3], "clock must be non-decreasing");
        assert!(w[1][4] >= w[0][4], "discovered count must be non-decreasing");
    }
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["events"].as_u64().unwrap() as usize, rows.len());
}

#[test]
fn report_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rep");
    let o = remlab(dir.path(), &["-o", out.to_str().unwrap(), "--suite", "age", "report"]);
    assert!(matches!(code(&o), 0 | 1), "{}", String::from_utf8_lossy(&o.stderr));
    let age = std::fs::read_to_string(out.join("age.csv")).unwrap();
    assert!(age.starts_with("n,sample,age\n"));
    assert_eq!(age.lines().count(), 1 + 2 * 60);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["checks"][0]["id"], 11);
    let expected = if report["summary"]["verdict"] == "pass" { 0 } else { 1 };
    assert_eq!(code(&o), expected);
}

#[test]
fn limits_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lim");
    let o = remlab(dir.path(), &["-o", out.to_str().unwrap(), "limits", "--write-paths", "3"]);
    assert!(matches!(code(&o), 0 | 1), "{}", String::from_utf8_lossy(&o.stderr));
    let lap = std::fs::read_to_string(out.join("laplace.csv")).unwrap();
    assert!(lap.starts_with("lambda,psi,psi_delta,empirical\n"));
    assert_eq!(lap.lines().count(), 4);
    let paths = std::fs::read_to_string(out.join("limit_paths.csv")).unwrap();
    assert!(paths.lines().skip(1).all(|l| l.split(',').next().unwrap().parse::<usize>().unwrap() < 3));
}

#[test]
fn errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nn = 12\nalpha = 0.6\nbeta = 2.0\nabar = 0.5\ncbar = 0.5\ndelta = 0.3\nseed = 1\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_remlab")).arg("--config").arg(&bad).arg("scales").output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let o = remlab(dir.path(), &["-o", dir.path().join("x").to_str().unwrap(), "--max-events", "10", "traps"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("budget"));

    let o = remlab(dir.path(), &["analyze"]);
    assert_eq!(code(&o), 2);
}
