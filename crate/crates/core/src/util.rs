//! Deterministic seed derivation.
//!
//! Every stochastic draw in the library comes from a `ChaCha8Rng` whose seed
//! is a pure function of (root seed, role label, index). Reconstructing any
//! point of a run therefore never requires serialized RNG state: resuming at
//! iteration `k` re-derives the exact streams an uninterrupted run would use.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-period mixing of a 64-bit state.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a label, so distinct roles get decorrelated streams.
fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Derives a child seed from a root seed, a role label, and an index.
pub fn seed_for(root: u64, label: &str, index: u64) -> u64 {
    splitmix(splitmix(root ^ fnv1a(label)).wrapping_add(splitmix(index)))
}

/// Seeded generator for the given (root, label, index) stream.
pub fn rng_for(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_for(root, label, index))
}
