//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream keyed by a base seed
//! and a stream label, so parallel jobs (folds, MC passes) never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Well-known stream labels mixed into the base seed.
pub mod stream {
    pub const MEAN_INIT: u64 = 1;
    pub const WIDTH_INIT: u64 = 2;
    pub const ALPHA: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const FOLD: u64 = 7;
    pub const MC_PASS: u64 = 8;
    pub const BACKGROUND: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream label and an index into a new seed.
pub fn derive_seed(base: u64, label: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ label) ^ index)
}

pub fn stream_rng(base: u64, label: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, label, index))
}
