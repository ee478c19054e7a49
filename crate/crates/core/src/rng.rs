//! Seed derivation.
//!
//! Every random stream in the simulator is a `ChaCha20Rng` seeded from a
//! 64-bit value derived from the master seed:
//!
//! ```text
//! derive_seed(seed, index, tag) = mix(mix(seed ^ mix(index)) ^ fnv1a(tag))
//! ```
//!
//! where `mix` is the SplitMix64 finalizer and `fnv1a` is the 64-bit FNV-1a
//! hash of the tag bytes. Streams for different `(index, tag)` pairs are
//! independent for all practical purposes, and the derivation depends only on
//! its inputs, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Index used for streams that do not belong to a particular agent.
pub const GLOBAL: u64 = u64::MAX;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in tag.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(seed: u64, index: u64, tag: &str) -> u64 {
    mix(mix(seed ^ mix(index)) ^ fnv1a(tag))
}

pub fn stream(seed: u64, index: u64, tag: &str) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(seed, index, tag))
}
