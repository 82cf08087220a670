//! Counter-based random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha stream addressed by
//! `(seed, stream id)`. Trials, samples, splits, and permutations each get
//! their own stream, so results never depend on scheduling or thread count.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used inside one trial.
pub mod streams {
    pub const SAMPLE_X: u64 = 1;
    pub const SAMPLE_Y: u64 = 2;
    pub const SPLIT_X: u64 = 3;
    pub const SPLIT_Y: u64 = 4;
    pub const INIT: u64 = 5;
    pub const PERMUTATION_BASE: u64 = 1 << 32;
    pub const SUBSAMPLE: u64 = 6;
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seed of trial `index` under `master_seed`.
pub fn trial_seed(master_seed: u64, index: u64) -> u64 {
    stream(master_seed, index).next_u64()
}
