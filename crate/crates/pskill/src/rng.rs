//! Deterministic RNG streams.
//!
//! Every randomized stage takes an explicit seed and derives independent
//! sub-streams from `(seed, tags...)`. ChaCha8 is used because its output
//! is specified by the algorithm, not by the `rand` crate version, so runs
//! stay reproducible across dependency updates.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates nearby seeds/tags.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a generator for the stream identified by `(seed, tags)`.
///
/// Distinct tag lists yield statistically independent streams; identical
/// inputs yield identical streams.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    ChaCha8Rng::seed_from_u64(state)
}
