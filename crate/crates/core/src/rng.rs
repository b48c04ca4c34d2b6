//! Seed handling.
//!
//! Every stochastic path draws from [`ChaCha8Rng`], a counter-based stream
//! cipher generator whose output is specified independently of platform and
//! word size. A run is identified by a 64-bit seed; independent sub-streams
//! (one per block, per replicate, per optimizer) are selected with
//! [`ChaCha8Rng::set_stream`], so no two consumers ever share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers. Block `ell` of a training run uses `BLOCK_BASE + ell`.
pub mod stream {
    pub const DATASET_TRAIN: u64 = 1;
    pub const DATASET_TEST: u64 = 2;
    pub const ADAM: u64 = 3;
    pub const ORACLE: u64 = 4;
    pub const BLOCK_BASE: u64 = 1 << 32;
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives the seed for replicate `index` of a run seeded with `seed`.
/// Replicate 0 keeps the base seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    if index == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
