//! Seeded random streams. Every random draw in the crate comes from one root
//! seed split into independent ChaCha streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod stream {
    pub const FOLDS: u64 = 1;
    pub const HOLDOUT: u64 = 2;
    pub const KMEANS: u64 = 3;
    pub const HEAD_INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const PROJECTION: u64 = 6;
    pub const GRADCHECK: u64 = 7;
    pub const SYNTH: u64 = 8;
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed, e.g. one per cross-validation fold.
pub fn child(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
