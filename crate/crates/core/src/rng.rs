//! Deterministic seed derivation and the RNG type used across the crate.
//!
//! Every stochastic stage (trial, split, branch, epoch, batch) draws from its
//! own sub-stream derived from the run seed, so stages can be reordered or
//! parallelized without changing each other's results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The deterministic generator used everywhere; stable across platforms.
pub type DetRng = ChaCha8Rng;

/// Stream tags so sub-seeds for different purposes never collide.
pub mod stream {
    pub const TRIAL: u64 = 0x01;
    pub const SPLIT: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const SHUFFLE: u64 = 0x04;
    pub const AUGMENT: u64 = 0x05;
    pub const BRANCH: u64 = 0x06;
    pub const COMBINED: u64 = 0x07;
    pub const SYNTH: u64 = 0x08;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of tags (stream id, trial, epoch, batch
/// index, ...) into a new 64-bit seed. Stable: never changes between runs.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag));
    }
    state
}

/// A generator for the sub-stream identified by `(base, tags)`.
pub fn rng_from(base: u64, tags: &[u64]) -> DetRng {
    DetRng::seed_from_u64(derive_seed(base, tags))
}
