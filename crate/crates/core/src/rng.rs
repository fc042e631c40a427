//! Seed plumbing. Every stochastic step draws from a ChaCha stream whose seed
//! is derived from a parent seed and a small set of integer keys.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `parent` and `key`.
pub fn derive(parent: u64, key: u64) -> u64 {
    mix(parent ^ mix(key))
}

pub fn derive2(parent: u64, a: u64, b: u64) -> u64 {
    derive(derive(parent, a), b)
}
