//! Replica runners: one configured experiment, fanned out over replicas with
//! the stream policy of [`crate::rngs`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::env::{EnergyField, EnvError, ModelParams, Vertex};
use crate::observe::{attach_green, rescale_clock, ObserveError, TrapDetector, TrapEvent};
use crate::par::{try_map_indexed, Exec};
use crate::rngs::{env_seed, stream, STREAM_AGE, STREAM_GREEN, STREAM_MARKS};
use crate::scales::{DnSource, Estimate, ScaleError, ScaleSet};
use crate::walk::{run_x, NoObserver, RunOptions, StartMode, StopRule, TrajectoryRecord, WalkError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
    #[error("estimated {events:.3e} events exceed the budget of {budget:.3e}")]
    Budget { events: f64, budget: f64 },
    #[error("clock did not reach {target} within {max_time:.3e} time units (replica {replica})")]
    ClockNotReached { target: f64, max_time: f64, replica: usize },
}

/// Per-run hard cap, as a multiple of the expected event count.
const RUN_CAP_FACTOR: f64 = 50.0;
/// The age run gives up after this many multiples of `t_N`.
const AGE_MAX_TIME: f64 = 1e3;

/// Summary of one replica run of `X` on `[0, horizon t_N]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicaRun {
    pub replica: usize,
    pub env_seed: u64,
    pub start: Vertex,
    pub num_events: u64,
    pub traps: Vec<TrapEvent>,
    /// `C_N(min(1, horizon))`.
    pub clock_at_1: f64,
    /// `C_N(horizon)`.
    pub clock_at_horizon: f64,
    /// `(D, R)` at `t_N`, when the horizon covers it.
    pub counts_at_tn: Option<(u64, u64)>,
    /// `(delta, sup |C_N - C_N^(delta)|)` over `[0, horizon]`.
    pub shallow: Vec<(f64, f64)>,
    #[serde(skip)]
    pub record: Option<TrajectoryRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaMode {
    pub traps: bool,
    pub keep_record: bool,
}

impl ReplicaMode {
    pub const TRAPS: ReplicaMode = ReplicaMode { traps: true, keep_record: false };
    pub const CLOCK: ReplicaMode = ReplicaMode { traps: false, keep_record: false };
}

/// A configured experiment at one `N`.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub params: ModelParams,
    pub scales: ScaleSet,
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Experiment, ExperimentError> {
        cfg.validate()?;
        let params = cfg.params();
        let mut scales = ScaleSet::compute(&params, cfg.time_scale)?;
        let mut exp = Experiment { cfg: cfg.clone(), params, scales: scales.clone() };
        if cfg.d_n_source == DnSource::Estimated {
            let est = exp.estimate_d_n(cfg.d_n_replicas)?;
            scales = ScaleSet::with_estimate(&exp.params, cfg.time_scale, est)?;
            exp.scales = scales;
        }
        Ok(exp)
    }

    /// The same configuration at another `N` (same `abar`, `cbar`, temperature rule).
    pub fn at_n(cfg: &ExperimentConfig, n: u32) -> Result<Experiment, ExperimentError> {
        let mut c = cfg.clone();
        c.model.n = n;
        Experiment::new(&c)
    }

    pub fn exec(&self) -> Exec {
        self.cfg.exec
    }

    pub fn field(&self, replica: usize) -> Result<EnergyField, ExperimentError> {
        let mut p = self.params.clone();
        p.seed = env_seed(self.params.seed, replica, self.cfg.fresh_env_per_replica);
        Ok(EnergyField::new(p)?)
    }

    /// Expected number of jumps of `X` over `horizon t_N`: the mean jump rate is
    /// `N phi(a)^2`.
    pub fn expected_events(&self, horizon: f64) -> f64 {
        horizon * self.scales.t_n * self.params.n as f64 * self.scales.phi_a.powi(2)
    }

    /// Refuses runs whose total expected event count exceeds `max_events`.
    pub fn check_budget(&self, horizon: f64, runs: usize) -> Result<f64, ExperimentError> {
        let events = self.expected_events(horizon) * runs as f64;
        if events > self.cfg.max_events {
            return Err(ExperimentError::Budget { events, budget: self.cfg.max_events });
        }
        Ok(events)
    }

    /// Hard per-run event cap, covering the occupation windows (mean `N^2`)
    /// that may extend a run past its horizon.
    fn run_cap(&self, horizon: f64) -> u64 {
        let window = (self.params.n as f64).powi(2) / self.scales.t_n;
        (RUN_CAP_FACTOR * self.expected_events(horizon + 10.0 * window)).max(1e7).min(u64::MAX as f64 / 2.0) as u64
    }

    /// Runs replica `r` from a uniform start with clock summaries and, in
    /// [`ReplicaMode::traps`], trap detection at the model `delta` with Green
    /// estimates at every trap.
    pub fn run_replica(&self, r: usize, mode: ReplicaMode) -> Result<ReplicaRun, ExperimentError> {
        let s = &self.scales;
        let seed = self.params.seed;
        let horizon = self.cfg.horizon;
        let mut field = self.field(r)?;
        let env_seed = field.params().seed;
        let opts = RunOptions::until(horizon * s.t_n).clock_units(s.log_b_n).budget(self.run_cap(horizon));
        let mut rng = stream(seed, r as u64);
        let (record, log, traps) = if mode.traps {
            let mut det = TrapDetector::new(s, self.params.delta, horizon * s.t_n, stream(seed, STREAM_MARKS | r as u64));
            let (record, log) = run_x(&mut field, StartMode::Uniform, opts, &mut rng, &mut det)?;
            let mut traps = det.into_events();
            let g = &self.cfg.green;
            attach_green(&mut field, &mut traps, g.samples, g.method, &mut stream(seed, STREAM_GREEN | r as u64))?;
            (record, log, traps)
        } else {
            let (record, log) = run_x(&mut field, StartMode::Uniform, opts, &mut rng, &mut NoObserver)?;
            (record, log, Vec::new())
        };
        let path = rescale_clock(&record, s, horizon)?;
        let counts_at_tn = if horizon >= 1.0 { Some(log.counts(s.t_n)?) } else { None };
        let mut shallow = Vec::with_capacity(self.cfg.delta_grid.len());
        for &d in &self.cfg.delta_grid {
            let thr = s.log_deep_threshold(d);
            let mass: f64 = record.events.iter().filter(|e| field.log_tau(e.site) < thr).map(|e| e.clock_inc).sum();
            shallow.push((d, s.clock_factor * mass));
        }
        Ok(ReplicaRun {
            replica: r,
            env_seed,
            start: record.start,
            num_events: record.num_events,
            traps,
            clock_at_1: path.eval(horizon.min(1.0)),
            clock_at_horizon: path.eval(horizon),
            counts_at_tn,
            shallow,
            record: mode.keep_record.then_some(record),
        })
    }

    pub fn run_replicas(&self, count: usize, mode: ReplicaMode) -> Result<Vec<ReplicaRun>, ExperimentError> {
        self.check_budget(self.cfg.horizon, count)?;
        try_map_indexed(self.exec(), count, |r| self.run_replica(r, mode))
    }

    /// `A_N(t)`: depth over `B_N` of the site occupied when the rescaled clock
    /// first reaches `t`, from a uniform start.
    pub fn age_sample(&self, r: usize, t: f64) -> Result<f64, ExperimentError> {
        let s = &self.scales;
        let mut field = self.field(r)?;
        let max_time = AGE_MAX_TIME * s.t_n;
        let target = t / s.clock_factor;
        let mut opts = RunOptions::until(max_time).clock_units(s.log_b_n).summaries_only().budget(self.run_cap(AGE_MAX_TIME));
        opts.stop = StopRule::Clock { target, max_time };
        // The last holding is the one straddling the target: track it directly.
        struct Last(Option<Vertex>);
        impl crate::walk::WalkObserver for Last {
            fn on_hold(&mut self, _: &mut EnergyField, site: Vertex, _: f64, _: f64) {
                self.0 = Some(site);
            }
        }
        let mut last = Last(None);
        let (record, _) = run_x(&mut field, StartMode::Uniform, opts, &mut stream(self.params.seed, STREAM_AGE | r as u64), &mut last)?;
        if record.clock < target {
            return Err(ExperimentError::ClockNotReached { target: t, max_time, replica: r });
        }
        let site = last.0.expect("at least one holding");
        Ok((field.log_tau(site) - s.log_b_n).exp())
    }

    pub fn age_samples(&self, count: usize, t: f64) -> Result<Vec<f64>, ExperimentError> {
        self.check_budget(t.max(1.0), count)?;
        try_map_indexed(self.exec(), count, |r| self.age_sample(r, t))
    }

    /// Monte Carlo `d_N = E[D_N(t_N)]` from uniform starts.
    pub fn estimate_d_n(&self, replicas: usize) -> Result<Estimate, ExperimentError> {
        if replicas < 2 {
            return Err(ScaleError::TooFewReplicas(replicas).into());
        }
        self.check_budget(1.0, replicas)?;
        let t_n = self.scales.t_n;
        let cap = self.run_cap(1.0);
        let d = try_map_indexed(self.exec(), replicas, |r| -> Result<f64, ExperimentError> {
            let mut field = self.field(r)?;
            let opts = RunOptions::until(t_n).summaries_only().budget(cap);
            let (_, log) = run_x(&mut field, StartMode::Uniform, opts, &mut stream(self.params.seed, r as u64), &mut NoObserver)?;
            Ok(log.counts(t_n)?.0 as f64)
        })?;
        Ok(Estimate::from_samples(&d))
    }
}

/// Pools trap events over replicas with inter-arrival spacings in units of
/// `t_N` (the first spacing is measured from 0).
pub fn pooled_traps(runs: &[ReplicaRun]) -> Vec<(usize, f64, TrapEvent)> {
    let mut out = Vec::new();
    for run in runs {
        let mut prev = 0.0;
        for ev in &run.traps {
            out.push((run.replica, ev.t_over_tn - prev, ev.clone()));
            prev = ev.t_over_tn;
        }
    }
    out
}
