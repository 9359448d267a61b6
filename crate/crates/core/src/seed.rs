//! Deterministic seed derivation.
//!
//! Every random stream in the trainers is a [`ChaCha8Rng`] seeded from a base
//! seed mixed with small integer coordinates (epoch, worker, triple index...).
//! Two code paths that derive the same coordinates see the same draws, which
//! is what lets the single-thread and map/reduce trainers line up exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags, so that e.g. the shuffle of epoch 3 never collides with the
/// corruption stream of worker 3.
pub(crate) const TAG_SHUFFLE: u64 = 0x5348_5546;
pub(crate) const TAG_CORRUPT: u64 = 0x434f_5252;
pub(crate) const TAG_REDUCE: u64 = 0x5245_4455;
pub(crate) const TAG_INIT: u64 = 0x494e_4954;
pub(crate) const TAG_TRIPLE: u64 = 0x5452_4950;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`. Order-sensitive.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, parts: &[u64]) -> Rng {
    rng(derive(base, parts))
}
