//! Counter-based randomness.
//!
//! Draws are pure functions of a key tuple, so work split across threads
//! produces the same values regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key tuple into a well-mixed 64-bit word.
pub fn keyed(parts: &[u64]) -> u64 {
    let mut h = GOLDEN;
    for &p in parts {
        h = mix(h.wrapping_add(GOLDEN) ^ mix(p.wrapping_add(GOLDEN)));
    }
    h
}

/// Uniform index in `0..n` from a key tuple (multiply-shift reduction).
pub fn keyed_index(parts: &[u64], n: usize) -> usize {
    debug_assert!(n > 0);
    ((keyed(parts) as u128 * n as u128) >> 64) as usize
}

/// A stream generator for bulk draws (shuffles, noise), seeded from a key tuple.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(keyed(parts))
}

/// Derives a sub-seed from a master seed and a string tag.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let tag_hash = tag
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
    keyed(&[master, tag_hash])
}
