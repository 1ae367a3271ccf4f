//! Deterministic random streams derived from a seed and a path of indices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent uses of one seed from colliding.
pub mod tag {
    pub const VIDEO: u64 = 1;
    pub const CORPUS: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const TRAIN_DROPOUT: u64 = 6;
    pub const TRAIN_EPSILON: u64 = 7;
    pub const MC_DROPOUT: u64 = 8;
    pub const FRAGMENTS: u64 = 9;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with every element of `path` into one 64-bit key.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |h, &p| splitmix64(h ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}
