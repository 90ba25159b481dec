//! The single seedable generator every stochastic draw flows from.
//!
//! A master seed is split into independent streams by ChaCha stream id, so
//! replicated chains or sweep cells never share state but remain reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeedRng = ChaCha8Rng;

/// Fixed stream ids for the stochastic parts of one experiment.
pub mod streams {
    pub const DATASET: u64 = 0;
    pub const TEST_SET: u64 = 1;
    pub const CANDIDATES: u64 = 2;
    pub const CHAIN: u64 = 3;
    pub const SWEEP: u64 = 4;
}

pub fn from_seed(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for stream `stream` of `seed`.
pub fn split(seed: u64, stream: u64) -> SeedRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed, used where an API takes a plain `u64` seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    split(seed, stream).next_u64()
}
