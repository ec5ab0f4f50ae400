//! Seeded random number generation.
//!
//! Every stochastic operation in the crate draws from [`ChaCha8Rng`] seeded
//! with `seed_from_u64`. ChaCha8 output is specified independently of the
//! platform, so a given seed produces the same stream everywhere. OS entropy
//! is never consulted.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Identifier recorded in run manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named purpose from a base seed.
///
/// Used where one user-facing seed has to drive several generators (for
/// example the probe model and the final classifier of one trial).
pub fn derive(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
