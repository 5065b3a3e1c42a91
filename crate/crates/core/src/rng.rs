//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a generator keyed by a seed and a
//! tuple of counters (chain, step, particle, ...). Results therefore do not
//! depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Stream domains, so that different consumers of the same seed never share
/// a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Chain = 1,
    Particle = 2,
    Resample = 3,
    Prior = 4,
    Data = 5,
    Training = 6,
    Online = 7,
    Subsample = 8,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed, a domain tag and a counter tuple into a 64-bit key.
pub fn stream_key(seed: u64, domain: Domain, counters: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x5851_f42d_4c95_7f2d);
    h = splitmix64(h ^ domain as u64);
    for &c in counters {
        h = splitmix64(h ^ c.wrapping_mul(0x2545_f491_4f6c_dd1d));
    }
    h
}

/// Generator for the stream identified by `(seed, domain, counters)`.
pub fn stream(seed: u64, domain: Domain, counters: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, domain, counters))
}

/// Fills `out` with independent standard normal draws.
pub fn fill_normal(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

pub fn normal_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    fill_normal(rng, &mut v);
    v
}
