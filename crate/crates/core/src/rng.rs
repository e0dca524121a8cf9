//! Seed derivation for reproducible randomness.
//!
//! All stochastic code in this crate draws from [`rand_chacha::ChaCha8Rng`]
//! streams created through these helpers. Derived seeds are pure functions
//! of their inputs, so any run, sub-run, or per-item draw can be recreated
//! in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a 64-bit value through a splitmix64 finalizer round.
///
/// Used to turn structured inputs (seed, run index, item hash) into
/// well-distributed stream seeds. Bijective, so distinct inputs never
/// collide.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Combines two 64-bit values into one derived seed.
pub fn combine(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b))
}

/// FNV-1a hash of a string, for keying per-item random streams.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in s.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic ChaCha stream for a derived seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
