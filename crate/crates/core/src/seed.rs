//! Seed derivation for reproducible, schedule-independent randomness.
//!
//! Every independent unit of work (a dictionary level, a k-means run on one
//! cluster, one spectral block, one rotation block) draws from its own
//! generator whose seed is a pure function of the user seed and the unit's
//! position, so parallel execution order never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a path of stream tags.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags used by the training pipeline.
pub mod stream {
    pub const DICTIONARY: u64 = 1;
    pub const SPECTRAL: u64 = 2;
    pub const ROTATION: u64 = 3;
    pub const LSH: u64 = 4;
    pub const ITQ: u64 = 5;
    pub const PROJECTION: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const RESAMPLE: u64 = 8;
}
