//! Seed stream policy. Every random quantity in a run is drawn from a ChaCha8
//! stream identified by `(base seed, stream id)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const STREAM_ENV: u64 = 1 << 62;
pub const STREAM_GREEN: u64 = 1 << 61;
pub const STREAM_MARKS: u64 = 1 << 60;
pub const STREAM_LIMIT: u64 = 1 << 59;
pub const STREAM_STATS: u64 = 1 << 58;
pub const STREAM_AGE: u64 = 1 << 57;
pub const STREAM_EXPLORE: u64 = 1 << 56;
/// Stream ids below this value are replica trajectories.
pub const STREAM_EXACT: u64 = 1 << 55;

pub fn stream(seed: u64, id: u64) -> SimRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Seed of the energy landscape for a replica.
pub fn env_seed(seed: u64, replica: usize, fresh_env_per_replica: bool) -> u64 {
    if fresh_env_per_replica {
        stream(seed, STREAM_ENV | replica as u64).random()
    } else {
        stream(seed, STREAM_ENV).random()
    }
}

#[inline]
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(-u).ln_1p() / rate
}
