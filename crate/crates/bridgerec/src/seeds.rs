//! Deterministic RNG stream derivation.
//!
//! Every random choice in the toolkit draws from a stream derived from the
//! run's master seed plus a static purpose tag and optional indices. Streams
//! are therefore independent of evaluation order: adding a dataset or
//! reordering work never perturbs another stream's draws.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 finalizer. Stable across platforms and releases, unlike
/// `DefaultHasher`.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a purpose tag and indices into a master seed.
pub fn mix(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut acc = splitmix64(master);
    for &b in tag.as_bytes() {
        acc = splitmix64(acc ^ u64::from(b));
    }
    for &ix in indices {
        acc = splitmix64(acc ^ ix);
    }
    acc
}

/// A ChaCha8 stream for `(master, tag, indices)`.
pub fn stream(master: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, tag, indices))
}
