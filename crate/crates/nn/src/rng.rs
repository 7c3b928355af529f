//! The one pseudo-random generator used everywhere in the workspace.
//!
//! Xoshiro256** seeded from a single `u64` through SplitMix64 (the
//! `rand_xoshiro` `seed_from_u64` expansion). Streams are therefore fully
//! determined by the 64-bit seed on every platform.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256StarStar as Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent sub-stream seed, e.g. per record or per sample.
pub fn derive(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the combined value.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
