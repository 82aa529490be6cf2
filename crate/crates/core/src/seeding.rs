//! Deterministic seed handling.
//!
//! Every randomized routine takes an explicit `u64` seed and derives its
//! stream from ChaCha8, so runs are reproducible bit-for-bit across
//! platforms and thread counts. Families of related draws (trials in a
//! sweep, one sample set per control input) get independent sub-seeds via
//! a splitmix64 step, keyed by the parent seed and the child index.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; scrambles a 64-bit state into an output word.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the `index`-th child seed of `master`.
///
/// Children are statistically independent for distinct indices and never
/// collide with the master stream itself.
pub fn subseed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(1)))
}

/// Seeded RNG used throughout the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
