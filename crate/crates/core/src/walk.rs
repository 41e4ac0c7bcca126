//! Event-driven simulation of the accelerated walk `X` (symmetric rates
//! `exp(a (E_x + E_y))`), its clock, the time-changed Bouchaud dynamics `Z`,
//! and the exploration process.
//!
//! A site is *discovered* when the walk first enters its 1-neighbourhood.
//! On arrival at `y` the candidates are scanned as `y` itself, then `y` with
//! bit 0 flipped, bit 1 flipped, and so on.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnergyField, Vertex};
use crate::rngs::exponential;
use crate::special::KahanSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("time {t} is beyond the simulated horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("event budget of {0} exhausted")]
    Budget(u64),
    #[error("empty trajectory")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    Fixed(Vertex),
    Uniform,
}

/// One holding interval of `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub site: Vertex,
    /// Holding time, truncated at the horizon for the final event.
    pub hold: f64,
    /// Time at the end of the holding interval.
    pub time: f64,
    /// `hold * tau_site / B_N`.
    pub clock_inc: f64,
    /// Compensated running sum of `clock_inc`.
    pub clock: f64,
    /// `D` after arriving at `site`.
    pub discovered: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub start_mode: StartMode,
    pub start: Vertex,
    pub log_b_n: f64,
    pub horizon: f64,
    /// Empty when event recording is off.
    pub events: Vec<Event>,
    pub num_events: u64,
    /// Clock at the horizon, in units of `B_N`.
    pub clock: f64,
}

impl TrajectoryRecord {
    /// Clock value (units of `B_N`) after the `k`-th holding, `k >= 1`.
    pub fn clock_after(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.events.get(i)).map(|e| e.clock)
    }
}

/// Exploration order `x_1, x_2, ...` with discovery and first-visit times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryLog {
    pub order: Vec<Vertex>,
    pub discovery_times: Vec<f64>,
    pub visits: Vec<Vertex>,
    pub visit_times: Vec<f64>,
    pub horizon: f64,
}

impl DiscoveryLog {
    /// `(D(t), R(t))`: discovered and visited counts at time `t`.
    pub fn counts(&self, t: f64) -> Result<(u64, u64), WalkError> {
        if t > self.horizon {
            return Err(WalkError::BeyondHorizon { t, horizon: self.horizon });
        }
        let d = self.discovery_times.partition_point(|&s| s <= t) as u64;
        let r = self.visit_times.partition_point(|&s| s <= t) as u64;
        Ok((d, r))
    }

    pub fn first_discovery_time(&self, x: Vertex) -> Option<f64> {
        self.order.iter().position(|&v| v == x).map(|i| self.discovery_times[i])
    }
}

/// Callbacks from a running walk.
pub trait WalkObserver {
    /// A site enters the discovered set at `time` (before the horizon only).
    fn on_discover(&mut self, _field: &mut EnergyField, _site: Vertex, _time: f64) {}

    /// The walk holds at `site` during `[start, start + hold)`. Called with the
    /// untruncated holding, also during the extension past the horizon.
    fn on_hold(&mut self, _field: &mut EnergyField, _site: Vertex, _start: f64, _hold: f64) {}

    /// Keep simulating past the horizon until this time (no recording).
    fn pending_until(&self) -> Option<f64> {
        None
    }
}

pub struct NoObserver;
impl WalkObserver for NoObserver {}

impl<A: WalkObserver, B: WalkObserver> WalkObserver for (A, B) {
    fn on_discover(&mut self, field: &mut EnergyField, site: Vertex, time: f64) {
        self.0.on_discover(field, site, time);
        self.1.on_discover(field, site, time);
    }
    fn on_hold(&mut self, field: &mut EnergyField, site: Vertex, start: f64, hold: f64) {
        self.0.on_hold(field, site, start, hold);
        self.1.on_hold(field, site, start, hold);
    }
    fn pending_until(&self) -> Option<f64> {
        match (self.0.pending_until(), self.1.pending_until()) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop at this `X`-time.
    Time(f64),
    /// Stop once the clock (units of `B_N`) reaches `target`, or at `max_time`.
    Clock { target: f64, max_time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub stop: StopRule,
    /// `log B_N`; clock increments are `hold * exp(log tau - log_b_n)`.
    pub log_b_n: f64,
    pub record_events: bool,
    pub max_events: u64,
}

impl RunOptions {
    pub fn until(horizon: f64) -> Self {
        RunOptions { stop: StopRule::Time(horizon), log_b_n: 0.0, record_events: true, max_events: u64::MAX }
    }

    pub fn clock_units(mut self, log_b_n: f64) -> Self {
        self.log_b_n = log_b_n;
        self
    }

    pub fn summaries_only(mut self) -> Self {
        self.record_events = false;
        self
    }

    pub fn budget(mut self, max_events: u64) -> Self {
        self.max_events = max_events;
        self
    }
}

/// Membership set over vertices: a bitmap for moderate `N`, hashing above.
#[derive(Debug, Clone)]
pub enum SiteSet {
    Bits(Vec<u64>),
    Hashed(HashSet<u64>),
}

impl SiteSet {
    pub fn new(n: u32) -> Self {
        if n <= 28 {
            SiteSet::Bits(vec![0; (1usize << n).div_ceil(64)])
        } else {
            SiteSet::Hashed(HashSet::new())
        }
    }

    /// Inserts `x`; true if it was absent.
    #[inline]
    pub fn insert(&mut self, x: Vertex) -> bool {
        match self {
            SiteSet::Bits(b) => {
                let (w, m) = ((x.0 >> 6) as usize, 1u64 << (x.0 & 63));
                let fresh = b[w] & m == 0;
                b[w] |= m;
                fresh
            }
            SiteSet::Hashed(h) => h.insert(x.0),
        }
    }

    #[inline]
    pub fn contains(&self, x: Vertex) -> bool {
        match self {
            SiteSet::Bits(b) => b[(x.0 >> 6) as usize] & (1u64 << (x.0 & 63)) != 0,
            SiteSet::Hashed(h) => h.contains(&x.0),
        }
    }
}

/// One jump of `X` from `state`: holding time `~ Exp(omega(state))`, next site
/// chosen with probability proportional to `exp(a E_y)`.
pub fn step_x<R: Rng + ?Sized>(field: &mut EnergyField, state: Vertex, rng: &mut R) -> (f64, Vertex) {
    let n = field.n() as usize;
    let mut w = [0.0f64; 64];
    let mut total = 0.0;
    for (b, slot) in w.iter_mut().enumerate().take(n) {
        *slot = field.weight(state.flip(b as u32));
        total += *slot;
    }
    let rate = field.weight(state) * total;
    let hold = exponential(rng, rate);
    let mut u = rng.random::<f64>() * total;
    let mut pick = n - 1;
    for (b, &wb) in w.iter().enumerate().take(n) {
        if u < wb {
            pick = b;
            break;
        }
        u -= wb;
    }
    (hold, state.flip(pick as u32))
}

struct Explorer {
    discovered: SiteSet,
    visited: SiteSet,
    log: DiscoveryLog,
}

impl Explorer {
    fn arrive<O: WalkObserver>(&mut self, field: &mut EnergyField, obs: &mut O, y: Vertex, t: f64) {
        if self.visited.insert(y) {
            self.log.visits.push(y);
            self.log.visit_times.push(t);
        }
        let n = field.n();
        for z in std::iter::once(y).chain(y.neighbors(n)) {
            if self.discovered.insert(z) {
                self.log.order.push(z);
                self.log.discovery_times.push(t);
                obs.on_discover(field, z, t);
            }
        }
    }
}

/// Simulates `X` from `start` until the stop rule fires, then keeps going while
/// the observer has pending windows.
pub fn run_x<R: Rng + ?Sized, O: WalkObserver>(
    field: &mut EnergyField,
    start: StartMode,
    opts: RunOptions,
    rng: &mut R,
    obs: &mut O,
) -> Result<(TrajectoryRecord, DiscoveryLog), WalkError> {
    let horizon = match opts.stop {
        StopRule::Time(h) => h,
        StopRule::Clock { max_time, .. } => max_time,
    };
    if !(horizon > 0.0) {
        return Err(WalkError::Horizon(horizon));
    }
    let clock_target = match opts.stop {
        StopRule::Clock { target, .. } => target,
        StopRule::Time(_) => f64::INFINITY,
    };
    let n = field.n();
    let x0 = match start {
        StartMode::Fixed(v) => v,
        StartMode::Uniform => {
            let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
            Vertex(rng.random::<u64>() & mask)
        }
    };
    let mut ex = Explorer { discovered: SiteSet::new(n), visited: SiteSet::new(n), log: DiscoveryLog::default() };
    let mut events = Vec::new();
    let mut clock = KahanSum::new();
    let mut t = 0.0;
    let mut site = x0;
    let mut count = 0u64;
    ex.arrive(field, obs, site, 0.0);
    let end_time;
    loop {
        if count >= opts.max_events {
            return Err(WalkError::Budget(opts.max_events));
        }
        let (hold, next) = step_x(field, site, rng);
        count += 1;
        obs.on_hold(field, site, t, hold);
        let held = hold.min(horizon - t);
        let inc = held * (field.log_tau(site) - opts.log_b_n).exp();
        clock.add(inc);
        let done_time = t + hold >= horizon;
        let done_clock = clock.value() >= clock_target;
        let end = if done_time { horizon } else { t + hold };
        if opts.record_events {
            events.push(Event {
                site,
                hold: held,
                time: end,
                clock_inc: inc,
                clock: clock.value(),
                discovered: ex.log.order.len() as u64,
            });
        }
        t += hold;
        site = next;
        if done_time || done_clock {
            end_time = end;
            break;
        }
        ex.arrive(field, obs, site, t);
    }
    // Extension past the stop time for observers with open windows.
    while let Some(until) = obs.pending_until() {
        if t >= until {
            break;
        }
        if count >= opts.max_events {
            return Err(WalkError::Budget(opts.max_events));
        }
        let (hold, next) = step_x(field, site, rng);
        count += 1;
        obs.on_hold(field, site, t, hold);
        t += hold;
        site = next;
    }
    ex.log.horizon = end_time;
    let record = TrajectoryRecord {
        start_mode: start,
        start: x0,
        log_b_n: opts.log_b_n,
        horizon: end_time,
        events,
        num_events: count,
        clock: clock.value(),
    };
    Ok((record, ex.log))
}

/// One holding of `Z`: same site skeleton as `X`, holding in units of `B_N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZStep {
    pub site: Vertex,
    pub hold: f64,
}

/// The Bouchaud dynamics `Z = X o C^{-1}` as a list of holdings.
pub fn time_change_z(record: &TrajectoryRecord) -> Result<Vec<ZStep>, WalkError> {
    if record.events.is_empty() {
        return Err(WalkError::Empty);
    }
    Ok(record.events.iter().map(|e| ZStep { site: e.site, hold: e.clock_inc }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ModelParams;
    use crate::rngs::stream;

    fn params(n: u32, a: f64, seed: u64) -> ModelParams {
        ModelParams { n, beta: 1.0, a, abar: 0.0, cbar: 0.3, delta: 0.5, seed }
    }

    #[test]
    fn rht_jumps_are_uniform() {
        let n = 8;
        let mut f = EnergyField::new(params(n, 0.0, 3)).unwrap();
        let mut rng = stream(1, 0);
        let mut counts = vec![0.0; n as usize];
        let trials = 100_000;
        for _ in 0..trials {
            let (_, y) = step_x(&mut f, Vertex(5), &mut rng);
            counts[(y.0 ^ 5).trailing_zeros() as usize] += 1.0;
        }
        let expected = vec![trials as f64 / n as f64; n as usize];
        let rep = crate::stats::chi_square_gof("rht", &counts, &expected, 0.01).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn zero_disorder_holding_mean() {
        let n = 10;
        let mut f = EnergyField::zero_disorder(params(n, 0.7, 0)).unwrap();
        let mut rng = stream(2, 0);
        let k = 100_000;
        let holds: Vec<f64> = (0..k).map(|_| step_x(&mut f, Vertex(0), &mut rng).0).collect();
        let mean = holds.iter().sum::<f64>() / k as f64;
        // Exponential(N): sd = mean = 1/N.
        let se = 0.1 / (k as f64).sqrt();
        assert!((mean - 0.1).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn biased_jump_probability() {
        let mut t = vec![0.0; 4];
        t[1] = 1.0;
        let mut f = EnergyField::from_table(params(2, 1.0, 0), t).unwrap();
        let mut rng = stream(3, 0);
        let k = 100_000;
        let hits = (0..k).filter(|_| step_x(&mut f, Vertex(0), &mut rng).1 == Vertex(1)).count();
        let p = std::f64::consts::E / (std::f64::consts::E + 1.0);
        let phat = hits as f64 / k as f64;
        let se = (p * (1.0 - p) / k as f64).sqrt();
        assert!(((phat - p) / se).abs() < 2.576, "{phat} vs {p}");
    }

    #[test]
    fn first_discovery_batch_and_counts() {
        let n = 12;
        let mut f = EnergyField::new(params(n, 0.5, 4)).unwrap();
        let mut rng = stream(4, 0);
        let (rec, log) =
            run_x(&mut f, StartMode::Fixed(Vertex(9)), RunOptions::until(2.0), &mut rng, &mut NoObserver).unwrap();
        assert_eq!(log.order[0], Vertex(9));
        for b in 0..n {
            assert_eq!(log.order[1 + b as usize], Vertex(9).flip(b));
        }
        assert_eq!(log.counts(-1e-9).unwrap(), (0, 0));
        let first = rec.events[0].time;
        assert_eq!(log.counts(first * 0.5).unwrap(), (n as u64 + 1, 1));
        assert!(log.counts(3.0).is_err());
        let mut prev = (0, 0);
        for i in 0..=200 {
            let c = log.counts(2.0 * i as f64 / 200.0).unwrap();
            assert!(c.0 >= prev.0 && c.1 >= prev.1);
            assert!(c.0 <= (n as u64 + 1) * c.1.max(1));
            assert!(c.1 <= c.0);
            prev = c;
        }
        assert!((rec.events.last().unwrap().time - 2.0).abs() < 1e-12);
        for w in rec.events.windows(2) {
            assert!(w[1].time > w[0].time);
            assert!(w[1].hold > 0.0);
        }
        assert!(matches!(
            run_x(&mut f, StartMode::Uniform, RunOptions::until(0.0), &mut rng, &mut NoObserver),
            Err(WalkError::Horizon(_))
        ));
    }

    #[test]
    fn clock_is_sum_of_increments() {
        let mut f = EnergyField::new(params(10, 0.3, 5)).unwrap();
        let mut rng = stream(5, 0);
        let opts = RunOptions::until(5.0).clock_units(1.5);
        let (rec, _) = run_x(&mut f, StartMode::Uniform, opts, &mut rng, &mut NoObserver).unwrap();
        let mut s = 0.0;
        for (k, e) in rec.events.iter().enumerate() {
            let want = e.hold * (f.log_tau(e.site) - 1.5).exp();
            assert!((e.clock_inc - want).abs() <= 1e-12 * want);
            s += e.clock_inc;
            assert!((rec.clock_after(k + 1).unwrap() - s).abs() < 1e-9 * s.max(1e-300));
        }
        let z = time_change_z(&rec).unwrap();
        assert_eq!(z.len(), rec.events.len());
        assert!(z.iter().zip(&rec.events).all(|(a, b)| a.site == b.site));
    }

    #[test]
    fn zero_disorder_z_equals_x() {
        let mut f = EnergyField::zero_disorder(params(6, 0.0, 0)).unwrap();
        let mut rng = stream(6, 0);
        let (rec, _) = run_x(&mut f, StartMode::Uniform, RunOptions::until(3.0), &mut rng, &mut NoObserver).unwrap();
        for (z, e) in time_change_z(&rec).unwrap().iter().zip(&rec.events) {
            assert_eq!(z.hold, e.hold);
        }
    }

    #[test]
    fn no_duplicate_discoveries_after_cover() {
        let n = 10;
        let mut f = EnergyField::new(params(n, 0.4, 8)).unwrap();
        let mut rng = stream(8, 0);
        let (_, log) = run_x(&mut f, StartMode::Uniform, RunOptions::until(400.0).summaries_only(), &mut rng, &mut NoObserver)
            .unwrap();
        assert_eq!(log.order.len(), 1 << n);
        let mut seen = std::collections::HashSet::new();
        assert!(log.order.iter().all(|v| seen.insert(*v)));
        // Every visited site was discovered no later than its first visit.
        for (v, t) in log.visits.iter().zip(&log.visit_times) {
            assert!(log.first_discovery_time(*v).unwrap() <= *t);
        }
    }

    #[test]
    fn clock_stop_rule() {
        let mut f = EnergyField::new(params(12, 0.2, 9)).unwrap();
        let mut rng = stream(9, 0);
        let opts = RunOptions { stop: StopRule::Clock { target: 200.0, max_time: 1e6 }, ..RunOptions::until(1.0) };
        let (rec, _) = run_x(&mut f, StartMode::Uniform, opts, &mut rng, &mut NoObserver).unwrap();
        assert!(rec.clock >= 200.0);
        assert!(rec.events.len() >= 2);
        assert!(rec.events[rec.events.len() - 2].clock < 200.0);
        let budget = RunOptions::until(1e9).budget(100);
        assert_eq!(
            run_x(&mut f, StartMode::Uniform, budget, &mut rng, &mut NoObserver).unwrap_err(),
            WalkError::Budget(100)
        );
    }
}
