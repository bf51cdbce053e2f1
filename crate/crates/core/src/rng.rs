//! Seeded random streams.
//!
//! Every consumer of randomness asks for a `(seed, stream)` pair. ChaCha is a
//! counter-based generator, so distinct stream ids give independent sequences
//! without any shared state, and parallel consumers stay reproducible no
//! matter how they are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids used inside the library. Callers with their own needs should
/// derive ids with [`substream`].
pub mod streams {
    pub const POWER_METHOD: u64 = 1;
    pub const LANDMARKS: u64 = 2;
    pub const RANGE_FINDER: u64 = 3;
    pub const BANDWIDTH: u64 = 4;
    pub const SIMULATION: u64 = 5;
    pub const ORACLE: u64 = 6;
    pub const HOLDOUT: u64 = 7;
}

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child stream id, e.g. one per power-method restart.
pub fn substream(parent: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = parent
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed for benchmark sweeps.
pub fn trial_seed(base: u64, n: usize, trial: usize) -> u64 {
    substream(substream(base, n as u64), trial as u64)
}
