//! Deterministic RNG streams keyed by (seed, purpose, index).
//!
//! Every random draw in training and rendering comes from a stream derived
//! this way, so results depend only on the seed and the logical position of
//! the draw, never on scheduling or on how many draws happened before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    let k = splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index);
    ChaCha8Rng::seed_from_u64(k)
}

pub mod tags {
    pub const PIXEL: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const TRAIN_STEP: u64 = 3;
    pub const EPOCH: u64 = 4;
    pub const DATASET: u64 = 5;
    pub const LATENT: u64 = 6;
    pub const EVAL: u64 = 7;
}
