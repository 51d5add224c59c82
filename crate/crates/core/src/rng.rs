//! Deterministic random streams.
//!
//! Every stochastic step derives its own ChaCha stream from a tuple of
//! integers, so results do not depend on iteration order or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an ordered list of words into one seed.
pub fn stream_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_F0E6_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng_from(parts: &[u64]) -> Rng {
    Rng::seed_from_u64(stream_seed(parts))
}

/// Stream domains, so that e.g. the LHS stream never collides with an SFGE stream.
pub mod domain {
    pub const DATASET: u64 = 1;
    pub const INIT: u64 = 2;
    pub const PFL: u64 = 3;
    pub const LHS: u64 = 4;
    pub const SFGE: u64 = 5;
    pub const SURROGATE_SFGE: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const BATCH: u64 = 8;
}
