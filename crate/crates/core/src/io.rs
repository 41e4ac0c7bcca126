//! CSV and JSON writers for trajectories, trap events, clocks and ages.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{pooled_traps, ReplicaRun};
use crate::suite::TrapSamples;
use crate::walk::TrajectoryRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize)]
struct TrajectoryRow {
    step: usize,
    site: u64,
    hold: f64,
    #[serde(rename = "clock_over_B")]
    clock_over_b: f64,
    discovered_count: u64,
}

#[derive(Serialize, Deserialize)]
struct TrapRow {
    replica: usize,
    rank: usize,
    site: u64,
    t_over_tn: f64,
    spacing: f64,
    depth_over_b: f64,
    first_visit: Option<f64>,
    visited_within_n: bool,
    green: Option<f64>,
    green_stderr: Option<f64>,
    e_mark: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClockRow {
    replica: usize,
    env_seed: u64,
    start: u64,
    num_events: u64,
    clock_at_1: f64,
    clock_at_horizon: f64,
    discovered_at_tn: Option<u64>,
    visited_at_tn: Option<u64>,
}

#[derive(Serialize)]
struct AgeRow {
    n: u32,
    sample: usize,
    age: f64,
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// One row per holding: `step, site, hold, clock_over_B, discovered_count`.
pub fn trajectory_csv<W: Write>(w: W, record: &TrajectoryRecord) -> Result<(), IoError> {
    write_rows(
        w,
        record.events.iter().enumerate().map(|(i, e)| TrajectoryRow {
            step: i + 1,
            site: e.site.0,
            hold: e.hold,
            clock_over_b: e.clock,
            discovered_count: e.discovered,
        }),
    )
}

/// Deep-trap events of all replicas, with spacings in units of `t_N`.
pub fn traps_csv<W: Write>(w: W, runs: &[ReplicaRun]) -> Result<(), IoError> {
    write_rows(
        w,
        pooled_traps(runs).into_iter().map(|(replica, spacing, ev)| TrapRow {
            replica,
            rank: ev.n,
            site: ev.site.0,
            t_over_tn: ev.t_over_tn,
            spacing,
            depth_over_b: ev.depth_over_b,
            first_visit: ev.first_visit,
            visited_within_n: ev.visited_within_n,
            green: ev.green,
            green_stderr: ev.green_stderr,
            e_mark: ev.e_mark,
        }),
    )
}

pub fn clock_csv<W: Write>(w: W, runs: &[ReplicaRun]) -> Result<(), IoError> {
    write_rows(
        w,
        runs.iter().map(|r| ClockRow {
            replica: r.replica,
            env_seed: r.env_seed,
            start: r.start.0,
            num_events: r.num_events,
            clock_at_1: r.clock_at_1,
            clock_at_horizon: r.clock_at_horizon,
            discovered_at_tn: r.counts_at_tn.map(|c| c.0),
            visited_at_tn: r.counts_at_tn.map(|c| c.1),
        }),
    )
}

/// Age samples grouped by dimension.
pub fn age_csv<W: Write>(w: W, by_n: &[(u32, Vec<f64>)]) -> Result<(), IoError> {
    write_rows(
        w,
        by_n.iter().flat_map(|(n, xs)| xs.iter().enumerate().map(move |(i, &age)| AgeRow { n: *n, sample: i, age })),
    )
}

pub fn write_trajectory(path: &Path, record: &TrajectoryRecord) -> Result<(), IoError> {
    trajectory_csv(create(path)?, record)
}

pub fn write_traps(path: &Path, runs: &[ReplicaRun]) -> Result<(), IoError> {
    traps_csv(create(path)?, runs)
}

pub fn write_clock(path: &Path, runs: &[ReplicaRun]) -> Result<(), IoError> {
    clock_csv(create(path)?, runs)
}

pub fn write_age(path: &Path, by_n: &[(u32, Vec<f64>)]) -> Result<(), IoError> {
    age_csv(create(path)?, by_n)
}

/// One row of a Laplace-exponent table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceRow {
    pub lambda: f64,
    pub psi: f64,
    pub psi_delta: f64,
    pub empirical: f64,
}

pub fn write_laplace(path: &Path, rows: &[LaplaceRow]) -> Result<(), IoError> {
    write_rows(create(path)?, rows)
}

#[derive(Serialize)]
struct PathRow {
    path: usize,
    t: f64,
    value: f64,
}

/// Step paths as `path, t, value` rows, one per jump.
pub fn write_paths(path: &Path, paths: &[Vec<(f64, f64)>]) -> Result<(), IoError> {
    write_rows(
        create(path)?,
        paths.iter().enumerate().flat_map(|(i, p)| p.iter().map(move |&(t, value)| PathRow { path: i, t, value })),
    )
}

/// Reads `traps.csv` back into pooled samples. Replicas without events
/// only show up through `replicas`.
pub fn read_traps(path: &Path, replicas: usize) -> Result<TrapSamples, IoError> {
    let mut rows = Vec::new();
    for r in csv::Reader::from_path(path)?.deserialize() {
        let r: TrapRow = r?;
        rows.push(r);
    }
    let mut counts = vec![0.0; replicas.max(rows.iter().map(|r| r.replica + 1).max().unwrap_or(0))];
    for r in &rows {
        counts[r.replica] += 1.0;
    }
    Ok(TrapSamples {
        spacings: rows.iter().map(|r| r.spacing).collect(),
        depths: rows.iter().map(|r| r.depth_over_b).collect(),
        triples: rows.iter().filter_map(|r| r.e_mark.map(|e| (r.spacing, r.depth_over_b, e))).collect(),
        greens: rows.iter().filter_map(|r| r.green).collect(),
        counts,
    })
}

/// Reads `clock_at_1` from `clock.csv`.
pub fn read_clock(path: &Path) -> Result<Vec<f64>, IoError> {
    let mut out = Vec::new();
    for r in csv::Reader::from_path(path)?.deserialize() {
        let r: ClockRow = r?;
        out.push(r.clock_at_1);
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
