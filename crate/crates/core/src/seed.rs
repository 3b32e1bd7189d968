//! Deterministic seed derivation.
//!
//! Every random component draws from its own ChaCha stream whose seed is a
//! mix of the run seed and a path of integers (fold index, instance id, ...),
//! so results never depend on iteration order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

// Stream labels, kept distinct so components never share a stream.
pub const STREAM_FOLDS: u64 = 1;
pub const STREAM_DETECTOR: u64 = 2;
pub const STREAM_FOREST: u64 = 3;
pub const STREAM_PAIRS: u64 = 4;
pub const STREAM_SIAMESE: u64 = 5;
pub const STREAM_AUGMENT: u64 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `base`. Distinct paths give unrelated seeds.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, path: &[u64]) -> Rng {
    rng(derive(base, path))
}
