//! Seeded random streams.
//!
//! Every sampler takes an explicit generator. Independent stages of one run
//! draw from distinct ChaCha streams of the same seed so that adding draws to
//! one stage never perturbs another.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as ChainRng;

/// Stream ids for the stages of a training run.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const HPYLM: u64 = 2;
    pub const EM: u64 = 3;
    pub const GIBBS: u64 = 4;
    pub const LDA: u64 = 5;
    pub const GENRE: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
    /// HPYLM iterations use `ITERATION_BASE + iteration`.
    pub const ITERATION_BASE: u64 = 1 << 32;
}

pub fn seeded(seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChainRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for a derived chain (e.g. one genre), equal to `seed` for index 0.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
