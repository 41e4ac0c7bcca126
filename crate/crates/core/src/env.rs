//! Random environment on the hypercube `{0,1}^N`.
//!
//! Energies are the positive part of a standard Gaussian, generated lazily
//! from a counter-based hash of `(seed, vertex)` so that no run ever stores
//! all `2^N` values. Depths `tau_x = exp(beta sqrt(N) E_x)` are only exposed
//! in log form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::inv_norm_cdf;

/// Largest supported dimension. Vertices are packed in a `u64`.
pub const MAX_DIM: u32 = 63;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("vertices {0} and {1} are not nearest neighbours")]
    NotNeighbors(u64, u64),
    #[error("vertex {vertex} outside the hypercube of dimension {n}")]
    OutOfRange { vertex: u64, n: u32 },
    #[error("invalid model parameter: {0}")]
    InvalidParam(String),
    #[error("energy table has {got} entries, expected 2^{n}")]
    TableSize { got: usize, n: u32 },
}

/// A vertex of `{0,1}^N`, bit `i` is coordinate `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vertex(pub u64);

impl Vertex {
    pub const ORIGIN: Vertex = Vertex(0);

    #[inline]
    pub fn flip(self, bit: u32) -> Vertex {
        Vertex(self.0 ^ (1u64 << bit))
    }

    /// Hamming distance.
    #[inline]
    pub fn distance(self, other: Vertex) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    #[inline]
    pub fn is_neighbor(self, other: Vertex) -> bool {
        self.distance(other) == 1
    }

    /// Neighbours in ascending bit order.
    pub fn neighbors(self, n: u32) -> impl Iterator<Item = Vertex> {
        (0..n).map(move |b| self.flip(b))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for Vertex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Parameters of the model. `a` is the exponent in the symmetric rates
/// `omega(x, y) = exp(a (E_x + E_y))`; `abar` only matters when `a` is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u32,
    pub beta: f64,
    pub a: f64,
    pub abar: f64,
    pub cbar: f64,
    pub delta: f64,
    pub seed: u64,
}

impl ModelParams {
    /// Parameters with `a = abar sqrt(2 log N)`.
    pub fn with_derived_a(n: u32, beta: f64, abar: f64, cbar: f64, delta: f64, seed: u64) -> Self {
        ModelParams {
            n,
            beta,
            a: derived_a(n, abar),
            abar,
            cbar,
            delta,
            seed,
        }
    }

    /// Parameters where `beta` is solved from the requested tail index:
    /// `beta = sqrt(2 cbar) / alpha`.
    pub fn for_alpha(n: u32, alpha: f64, abar: f64, cbar: f64, delta: f64, seed: u64) -> Self {
        let beta = (2.0 * cbar).sqrt() / alpha;
        Self::with_derived_a(n, beta, abar, cbar, delta, seed)
    }

    pub fn alpha(&self) -> f64 {
        (2.0 * self.cbar).sqrt() / self.beta
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidParam(m.to_string()));
        if self.n == 0 || self.n > MAX_DIM {
            return bad("N must lie in 1..=63");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return bad("a must be nonnegative");
        }
        if !(self.abar >= 0.0 && self.abar.is_finite()) {
            return bad("abar must be nonnegative");
        }
        if !(self.cbar > 0.0 && self.cbar < std::f64::consts::LN_2) {
            return bad("cbar must lie in (0, log 2)");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        Ok(())
    }

    pub fn in_aging_regime(&self) -> bool {
        self.alpha() < 1.0
    }

    /// Warnings for parameters outside the asymptotic regime (`a >= 1` and
    /// `abar < 1/20`). These runs are still valid finite-N experiments.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.a < 1.0 {
            out.push(format!("a_N = {:.4} < 1: asymptotic assumption a_N >= 1 not honoured", self.a));
        }
        if self.abar >= 0.05 {
            out.push(format!("abar = {:.4} >= 1/20: asymptotic assumption abar < 1/20 not honoured", self.abar));
        }
        if !self.in_aging_regime() {
            out.push(format!("alpha = {:.4} >= 1: outside the aging regime", self.alpha()));
        }
        out
    }
}

/// `abar sqrt(2 log N)`, zero for `N = 1`.
pub fn derived_a(n: u32, abar: f64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        abar * (2.0 * (n as f64).ln()).sqrt()
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based uniform in `(0, 1)` for `(seed, counter)`.
#[inline]
pub fn hashed_uniform(seed: u64, counter: u64) -> f64 {
    let h = mix64(mix64(seed ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(mix64(counter.wrapping_add(0x632b_e59b_d9b4_e019))));
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// `max(G, 0)` for the Gaussian `G` keyed by `(seed, x)`.
#[inline]
pub fn hashed_energy(seed: u64, x: Vertex) -> f64 {
    let u = hashed_uniform(seed, x.0);
    if u <= 0.5 {
        0.0
    } else {
        inv_norm_cdf(u)
    }
}

#[derive(Debug, Clone)]
enum Source {
    Hashed(u64),
    Table(Vec<f64>),
    Constant(f64),
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    key: u64,
    energy: f64,
    weight: f64,
}

const EMPTY: u64 = u64::MAX;
const CACHE_BITS: u32 = 15;

/// Lazily generated energy landscape with a direct-mapped memo.
///
/// Queries take `&mut self` because of the memo; an instance is confined to one
/// worker. Different instances built from the same seed agree exactly.
#[derive(Debug, Clone)]
pub struct EnergyField {
    params: ModelParams,
    source: Source,
    beta_sqrt_n: f64,
    cache: Vec<Slot>,
    mask: u64,
}

impl EnergyField {
    pub fn new(params: ModelParams) -> Result<Self, EnvError> {
        let seed = params.seed;
        Self::build(params, Source::Hashed(seed))
    }

    /// Every energy equal to zero (`tau = 1`, unit rates).
    pub fn zero_disorder(params: ModelParams) -> Result<Self, EnvError> {
        Self::build(params, Source::Constant(0.0))
    }

    /// Explicit energies indexed by vertex; length must be `2^N`.
    pub fn from_table(params: ModelParams, energies: Vec<f64>) -> Result<Self, EnvError> {
        if params.n > 30 || energies.len() != 1usize << params.n {
            return Err(EnvError::TableSize { got: energies.len(), n: params.n });
        }
        if energies.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(EnvError::InvalidParam("energies must be finite and nonnegative".into()));
        }
        Self::build(params, Source::Table(energies))
    }

    fn build(params: ModelParams, source: Source) -> Result<Self, EnvError> {
        params.validate()?;
        let beta_sqrt_n = params.beta * (params.n as f64).sqrt();
        let size = match &source {
            Source::Hashed(_) => 1usize << CACHE_BITS.min(params.n),
            _ => 0,
        };
        Ok(EnergyField {
            params,
            source,
            beta_sqrt_n,
            cache: vec![Slot { key: EMPTY, energy: 0.0, weight: 1.0 }; size],
            mask: size.saturating_sub(1) as u64,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n(&self) -> u32 {
        self.params.n
    }

    pub fn a(&self) -> f64 {
        self.params.a
    }

    /// Same landscape, different rate exponent `a`.
    pub fn with_a(&self, a: f64) -> Result<Self, EnvError> {
        let mut p = self.params.clone();
        p.a = a;
        Self::build(p, self.source.clone())
    }

    pub fn num_vertices(&self) -> Option<u64> {
        1u64.checked_shl(self.params.n)
    }

    pub fn check_vertex(&self, x: Vertex) -> Result<(), EnvError> {
        if self.params.n < 64 && x.0 >> self.params.n != 0 {
            return Err(EnvError::OutOfRange { vertex: x.0, n: self.params.n });
        }
        Ok(())
    }

    /// Energy without touching the memo.
    #[inline]
    pub fn energy_uncached(&self, x: Vertex) -> f64 {
        match &self.source {
            Source::Hashed(seed) => hashed_energy(*seed, x),
            Source::Table(t) => t[x.index()],
            Source::Constant(c) => *c,
        }
    }

    #[inline]
    fn slot(&mut self, x: Vertex) -> Slot {
        match &self.source {
            Source::Hashed(seed) => {
                let i = (mix64(x.0) & self.mask) as usize;
                let s = self.cache[i];
                if s.key == x.0 {
                    return s;
                }
                let energy = hashed_energy(*seed, x);
                let weight = (self.params.a * energy).exp();
                let s = Slot { key: x.0, energy, weight };
                self.cache[i] = s;
                s
            }
            Source::Table(t) => {
                let energy = t[x.index()];
                Slot { key: x.0, energy, weight: (self.params.a * energy).exp() }
            }
            Source::Constant(c) => Slot { key: x.0, energy: *c, weight: (self.params.a * *c).exp() },
        }
    }

    /// `E_x >= 0`.
    #[inline]
    pub fn energy(&mut self, x: Vertex) -> f64 {
        self.slot(x).energy
    }

    /// `exp(a E_x)`, the one-site factor of the symmetric rates.
    #[inline]
    pub fn weight(&mut self, x: Vertex) -> f64 {
        self.slot(x).weight
    }

    /// `log tau_x = beta sqrt(N) E_x`.
    #[inline]
    pub fn log_tau(&mut self, x: Vertex) -> f64 {
        self.beta_sqrt_n * self.energy(x)
    }

    pub fn beta_sqrt_n(&self) -> f64 {
        self.beta_sqrt_n
    }

    /// `omega(x, y) = exp(a (E_x + E_y))` for neighbours.
    pub fn omega_pair(&mut self, x: Vertex, y: Vertex) -> Result<f64, EnvError> {
        if !x.is_neighbor(y) {
            return Err(EnvError::NotNeighbors(x.0, y.0));
        }
        self.check_vertex(x)?;
        self.check_vertex(y)?;
        Ok((self.params.a * (self.energy(x) + self.energy(y))).exp())
    }

    /// Sum of `exp(a E_y)` over the neighbours of `x`.
    #[inline]
    pub fn neighbor_weight_sum(&mut self, x: Vertex) -> f64 {
        let mut s = 0.0;
        for b in 0..self.params.n {
            s += self.weight(x.flip(b));
        }
        s
    }

    /// Total jump rate of the accelerated walk out of `x`.
    pub fn omega_site(&mut self, x: Vertex) -> f64 {
        self.weight(x) * self.neighbor_weight_sum(x)
    }

    /// Deep-trap predicate in log domain: `log tau_x >= log_threshold`.
    #[inline]
    pub fn is_deep(&mut self, x: Vertex, log_threshold: f64) -> bool {
        self.log_tau(x) >= log_threshold
    }
}
