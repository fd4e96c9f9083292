//! Seed derivation.
//!
//! Every random stream is a ChaCha8 generator keyed by a sub-seed derived from
//! an experiment seed and a stream label, so sites and replicates draw from
//! disjoint, reproducible streams regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of stream `stream` under `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    mix(mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Derives a seed from a path of stream labels, e.g. `[setting, replicate]`.
pub fn sub_seed_path(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &p| sub_seed(s, p))
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, stream))
}
