//! Deep-trap detection along a run of `X`, Green-function estimates at traps,
//! occupation marks, and the rescaled clock and age paths.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnergyField, Vertex};
use crate::limitproc::{AgeHolding, AgePath};
use crate::path::{Path, PathError};
use crate::rngs::{exponential, SimRng};
use crate::scales::{Estimate, ScaleSet};
use crate::walk::{step_x, TrajectoryRecord, WalkObserver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserveError {
    #[error("run covers {have} but {need} is required")]
    HorizonTooShort { need: f64, have: f64 },
    #[error("Green estimate must be positive, got {0:?}")]
    NonPositiveGreen(Option<f64>),
    #[error("run has no recorded events")]
    NoEvents,
    #[error(transparent)]
    Path(#[from] PathError),
}

/// One deep trap met along the exploration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapEvent {
    /// Rank among deep traps of the run, from 1.
    pub n: usize,
    pub site: Vertex,
    pub discovery_time: f64,
    pub t_over_tn: f64,
    pub depth_over_b: f64,
    /// First visit `H` (before the horizon), if any.
    pub first_visit: Option<f64>,
    pub visited_within_n: bool,
    /// Occupation of the site during `[H, H + e~]`, `e~ ~ Exp(1/N^2)`.
    pub occupation: Option<f64>,
    pub green: Option<f64>,
    pub green_stderr: Option<f64>,
    pub e_mark: Option<f64>,
}

/// Observer that opens a [`TrapEvent`] for every discovered site with
/// `log tau >= log(delta B_N)` and measures the occupation window after the
/// first visit.
pub struct TrapDetector {
    log_threshold: f64,
    log_b_n: f64,
    t_n: f64,
    n: u32,
    horizon: f64,
    rng: SimRng,
    index: HashMap<Vertex, usize>,
    windows: Vec<Option<(f64, f64)>>,
    pending: Option<f64>,
    pub events: Vec<TrapEvent>,
}

impl TrapDetector {
    /// `horizon` is the `X`-time at which the main run stops; first visits
    /// after it are not recorded. `rng` drives the window lengths.
    pub fn new(scales: &ScaleSet, delta: f64, horizon: f64, rng: SimRng) -> Self {
        TrapDetector {
            log_threshold: scales.log_deep_threshold(delta),
            log_b_n: scales.log_b_n,
            t_n: scales.t_n,
            n: scales.n,
            horizon,
            rng,
            index: HashMap::new(),
            windows: Vec::new(),
            pending: None,
            events: Vec::new(),
        }
    }

    pub fn into_events(self) -> Vec<TrapEvent> {
        self.events
    }
}

impl WalkObserver for TrapDetector {
    fn on_discover(&mut self, field: &mut EnergyField, site: Vertex, time: f64) {
        let lt = field.log_tau(site);
        if lt < self.log_threshold {
            return;
        }
        self.index.insert(site, self.events.len());
        self.windows.push(None);
        self.events.push(TrapEvent {
            n: self.events.len() + 1,
            site,
            discovery_time: time,
            t_over_tn: time / self.t_n,
            depth_over_b: (lt - self.log_b_n).exp(),
            first_visit: None,
            visited_within_n: false,
            occupation: None,
            green: None,
            green_stderr: None,
            e_mark: None,
        });
    }

    fn on_hold(&mut self, _field: &mut EnergyField, site: Vertex, start: f64, hold: f64) {
        let Some(&i) = self.index.get(&site) else { return };
        let ev = &mut self.events[i];
        if ev.first_visit.is_none() {
            if start >= self.horizon {
                return;
            }
            ev.first_visit = Some(start);
            ev.visited_within_n = start - ev.discovery_time <= self.n as f64;
            let n2 = (self.n as f64).powi(2);
            let end = start + exponential(&mut self.rng, 1.0 / n2);
            self.windows[i] = Some((start, end));
            ev.occupation = Some(0.0);
            self.pending = Some(self.pending.map_or(end, |p| p.max(end)));
        }
        if let Some((a, b)) = self.windows[i] {
            let overlap = (start + hold).min(b) - start.max(a);
            if overlap > 0.0 {
                *ev.occupation.as_mut().expect("window open") += overlap;
            }
        }
    }

    fn pending_until(&self) -> Option<f64> {
        self.pending
    }
}

/// How the Green function at a site is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenMethod {
    /// Occupation of `x` until an independent Exp(1/N^2) alarm.
    Killed,
    /// `int_0^cutoff e^{-t/N^2} 1{X_t = x} dt + 2^{-N} N^2 e^{-cutoff/N^2}`:
    /// the spectral-gap bound puts the bias below `e^{-2 cutoff}/2`.
    Windowed { cutoff: f64 },
}

impl Default for GreenMethod {
    fn default() -> Self {
        GreenMethod::Windowed { cutoff: 8.0 }
    }
}

/// One independent sample of the chosen Green estimator started at `x`.
pub fn green_sample<R: Rng + ?Sized>(field: &mut EnergyField, x: Vertex, method: GreenMethod, rng: &mut R) -> f64 {
    let n2 = (field.n() as f64).powi(2);
    match method {
        GreenMethod::Killed => {
            let alarm = exponential(rng, 1.0 / n2);
            let (mut t, mut site, mut occ) = (0.0, x, 0.0);
            while t < alarm {
                let (hold, next) = step_x(field, site, rng);
                if site == x {
                    occ += hold.min(alarm - t);
                }
                t += hold;
                site = next;
            }
            occ
        }
        GreenMethod::Windowed { cutoff } => {
            let (mut t, mut site, mut occ) = (0.0, x, 0.0);
            while t < cutoff {
                let (hold, next) = step_x(field, site, rng);
                if site == x {
                    let end = (t + hold).min(cutoff);
                    // int_t^end e^{-s/N^2} ds
                    occ += n2 * ((-t / n2).exp() - (-end / n2).exp());
                }
                t += hold;
                site = next;
            }
            let tail = n2 * (-cutoff / n2).exp() * (-(field.n() as f64) * std::f64::consts::LN_2).exp();
            occ + tail
        }
    }
}

/// Raw samples of the Green estimator at `x`.
pub fn green_samples<R: Rng + ?Sized>(
    field: &mut EnergyField,
    x: Vertex,
    samples: usize,
    method: GreenMethod,
    rng: &mut R,
) -> Vec<f64> {
    (0..samples).map(|_| green_sample(field, x, method, rng)).collect()
}

/// Monte Carlo estimate of `G_N` at `x` with standard error.
pub fn green_mc<R: Rng + ?Sized>(
    field: &mut EnergyField,
    x: Vertex,
    samples: usize,
    method: GreenMethod,
    rng: &mut R,
) -> Estimate {
    Estimate::from_samples(&green_samples(field, x, samples.max(1), method, rng))
}

/// `e = occupation / green`.
pub fn extract_mark(trap: &TrapEvent, occupation: f64) -> Result<f64, ObserveError> {
    match trap.green {
        Some(g) if g > 0.0 => Ok(occupation / g),
        other => Err(ObserveError::NonPositiveGreen(other)),
    }
}

/// Fills `green` and `e_mark` of each event with fresh auxiliary runs.
pub fn attach_green(
    field: &mut EnergyField,
    events: &mut [TrapEvent],
    samples: usize,
    method: GreenMethod,
    rng: &mut SimRng,
) -> Result<(), ObserveError> {
    for ev in events.iter_mut() {
        let est = green_mc(field, ev.site, samples, method, rng);
        ev.green = Some(est.mean);
        ev.green_stderr = Some(est.stderr);
        if let Some(occ) = ev.occupation {
            ev.e_mark = Some(extract_mark(ev, occ)?);
        }
    }
    Ok(())
}

fn check_horizon(record: &TrajectoryRecord, need: f64) -> Result<(), ObserveError> {
    if record.events.is_empty() {
        return Err(ObserveError::NoEvents);
    }
    if record.horizon < need * (1.0 - 1e-12) {
        return Err(ObserveError::HorizonTooShort { need, have: record.horizon });
    }
    Ok(())
}

fn clock_path(
    record: &TrajectoryRecord,
    scales: &ScaleSet,
    t_max: f64,
    mut keep: impl FnMut(Vertex) -> bool,
) -> Result<Path, ObserveError> {
    check_horizon(record, t_max * scales.t_n)?;
    let mut pts = vec![(0.0, 0.0)];
    let mut level = 0.0;
    for e in &record.events {
        let start = (e.time - e.hold) / scales.t_n;
        if start >= t_max {
            break;
        }
        let end = (e.time / scales.t_n).min(t_max);
        let inc = if keep(e.site) { scales.clock_factor * e.clock_inc * (end - start) * scales.t_n / e.hold } else { 0.0 };
        level += inc;
        pts.push((end, level));
    }
    Ok(Path::new(pts)?)
}

/// `C_N(t) = N^2 phi(a)^2 B_N^{-1} C(t t_N)` on `[0, t_max]`, exact between
/// events (linear during each holding).
pub fn rescale_clock(record: &TrajectoryRecord, scales: &ScaleSet, t_max: f64) -> Result<Path, ObserveError> {
    clock_path(record, scales, t_max, |_| true)
}

/// `C^(delta)_N`: only holdings at sites with `tau >= delta B_N` contribute.
pub fn rescale_clock_truncated(
    record: &TrajectoryRecord,
    field: &mut EnergyField,
    scales: &ScaleSet,
    delta: f64,
    t_max: f64,
) -> Result<Path, ObserveError> {
    let thr = scales.log_deep_threshold(delta);
    clock_path(record, scales, t_max, |x| field.log_tau(x) >= thr)
}

/// `A_N` on the rescaled clock axis `[0, t_max]`: during the clock interval
/// contributed by a holding at `x` its value is `tau_x / B_N`.
pub fn age_path(
    record: &TrajectoryRecord,
    field: &mut EnergyField,
    scales: &ScaleSet,
    t_max: f64,
) -> Result<AgePath, ObserveError> {
    if record.events.is_empty() {
        return Err(ObserveError::NoEvents);
    }
    let total = scales.clock_factor * record.clock;
    if total < t_max {
        return Err(ObserveError::HorizonTooShort { need: t_max, have: total });
    }
    let mut holdings = Vec::new();
    let mut level = 0.0;
    for e in &record.events {
        if level >= t_max {
            break;
        }
        let hold = scales.clock_factor * e.clock_inc;
        holdings.push(AgeHolding { start: level, hold, size: (field.log_tau(e.site) - scales.log_b_n).exp() });
        level += hold;
    }
    Ok(AgePath { holdings, horizon: t_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ModelParams;
    use crate::exactsmall::{generator, green_exact};
    use crate::rngs::stream;
    use crate::scales::TimeScaleRule;
    use crate::stats::{ks_test, Reference};
    use crate::walk::{run_x, NoObserver, RunOptions, StartMode};

    fn params(n: u32, seed: u64) -> ModelParams {
        ModelParams::for_alpha(n, 0.6, 0.3, 0.5, 0.3, seed)
    }

    #[test]
    fn killed_green_matches_exact_and_is_exponential() {
        let p = ModelParams { a: 0.0, ..params(6, 1) };
        let mut f = EnergyField::zero_disorder(p).unwrap();
        let g = green_exact(&generator(&mut f).unwrap(), 36.0).unwrap()[(0, 0)];
        let mut rng = stream(1, 0);
        let xs = green_samples(&mut f, Vertex(0), 4000, GreenMethod::Killed, &mut rng);
        let est = Estimate::from_samples(&xs);
        assert!((est.mean - g).abs() < 3.0 * est.stderr, "{est:?} vs {g}");
        let r = ks_test("green", &xs, &Reference::Exponential { rate: 1.0 / est.mean }, 0.01).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn windowed_green_matches_exact_with_disorder() {
        let mut f = EnergyField::new(params(7, 2)).unwrap();
        let g = green_exact(&generator(&mut f).unwrap(), 49.0).unwrap();
        let mut rng = stream(2, 0);
        for x in [0u64, 17, 99] {
            let est = green_mc(&mut f, Vertex(x), 3000, GreenMethod::Windowed { cutoff: 8.0 }, &mut rng);
            let want = g[(x as usize, x as usize)];
            assert!((est.mean - want).abs() < 3.5 * est.stderr, "x={x}: {est:?} vs {want}");
        }
    }

    #[test]
    fn marks_scale_with_green() {
        let mut ev = TrapEvent {
            n: 1,
            site: Vertex(0),
            discovery_time: 0.0,
            t_over_tn: 0.0,
            depth_over_b: 1.0,
            first_visit: Some(0.0),
            visited_within_n: true,
            occupation: Some(0.4),
            green: Some(0.2),
            green_stderr: None,
            e_mark: None,
        };
        assert_eq!(extract_mark(&ev, 0.4).unwrap(), 2.0);
        ev.green = Some(0.4);
        assert_eq!(extract_mark(&ev, 0.4).unwrap(), 1.0);
        ev.green = Some(0.0);
        assert!(extract_mark(&ev, 0.4).is_err());
    }

    fn run_with_traps(n: u32, delta: f64, seed: u64) -> (EnergyField, ScaleSet, TrajectoryRecord, Vec<TrapEvent>) {
        let p = params(n, seed);
        let scales = ScaleSet::compute(&p, TimeScaleRule::DiscoveryMatched).unwrap();
        let mut f = EnergyField::new(p).unwrap();
        let horizon = scales.t_n;
        let mut det = TrapDetector::new(&scales, delta, horizon, stream(seed, 99));
        let opts = RunOptions::until(horizon).clock_units(scales.log_b_n);
        let (rec, _) = run_x(&mut f, StartMode::Uniform, opts, &mut stream(seed, 0), &mut det).unwrap();
        (f, scales, rec, det.into_events())
    }

    #[test]
    fn detector_finds_all_deep_discoveries() {
        let (mut f, scales, _, events) = run_with_traps(14, 0.3, 3);
        let thr = scales.log_deep_threshold(0.3);
        for (k, ev) in events.iter().enumerate() {
            assert_eq!(ev.n, k + 1);
            assert!(ev.depth_over_b >= 0.3 * (1.0 - 1e-12));
            assert!(f.log_tau(ev.site) >= thr);
            if let (Some(h), Some(o)) = (ev.first_visit, ev.occupation) {
                assert!(h >= ev.discovery_time && o >= 0.0);
            }
        }
        assert!(events.windows(2).all(|w| w[1].discovery_time >= w[0].discovery_time));
        let (_, _, _, none) = run_with_traps(14, 1e9, 3);
        assert!(none.is_empty());
    }

    #[test]
    fn clock_paths() {
        let (mut f, scales, rec, _) = run_with_traps(12, 0.3, 4);
        let c = rescale_clock(&rec, &scales, 1.0).unwrap();
        assert_eq!(c.eval(0.0), 0.0);
        assert!(c.is_nondecreasing());
        assert!((c.eval(1.0) - scales.clock_factor * rec.clock).abs() < 1e-9 * c.eval(1.0));
        let cd = rescale_clock_truncated(&rec, &mut f, &scales, 0.3, 1.0).unwrap();
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            assert!(cd.eval(t) <= c.eval(t) + 1e-12);
        }
        assert!(matches!(rescale_clock(&rec, &scales, 2.0), Err(ObserveError::HorizonTooShort { .. })));
        let total = scales.clock_factor * rec.clock;
        let a = age_path(&rec, &mut f, &scales, total * 0.5).unwrap();
        for h in &a.holdings {
            let deep = h.size >= 0.3;
            let site_deep = rec.events.iter().any(|e| (f.log_tau(e.site) - scales.log_b_n).exp() == h.size && f.log_tau(e.site) >= scales.log_deep_threshold(0.3));
            assert_eq!(deep, site_deep);
        }
        assert!(age_path(&rec, &mut f, &scales, total * 2.0).is_err());
    }

    #[test]
    fn single_site_age_is_constant() {
        let p = params(4, 5);
        let scales = ScaleSet::compute(&p, TimeScaleRule::DiscoveryMatched).unwrap();
        let mut f = EnergyField::new(p).unwrap();
        let (rec, _) =
            run_x(&mut f, StartMode::Fixed(Vertex(3)), RunOptions::until(1e-9).clock_units(scales.log_b_n), &mut stream(5, 0), &mut NoObserver)
                .unwrap();
        let total = scales.clock_factor * rec.clock;
        let a = age_path(&rec, &mut f, &scales, total).unwrap();
        let want = (f.log_tau(Vertex(3)) - scales.log_b_n).exp();
        for k in 0..10 {
            assert_eq!(a.value(total * k as f64 / 10.0), want);
        }
    }
}
