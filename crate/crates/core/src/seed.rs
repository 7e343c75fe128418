//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline (partition shuffles, pixel
//! subsampling, model init, batch order, participant sampling) draws from a
//! ChaCha8 stream whose seed is derived from the single global seed by a
//! SplitMix64 chain over `(stream tag, indices...)`. Reruns with the same
//! global seed are bit-identical; distinct tags give independent streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags separating the independent consumers of the global seed.
pub mod stream {
    pub const PARTITION: u64 = 1;
    pub const SUBSAMPLE: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const BATCH_ORDER: u64 = 4;
    pub const PARTICIPANTS: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
    pub const BENCH: u64 = 7;
    /// Pseudo agent id for the held-out test set.
    pub const TEST_SET: u64 = u64::MAX;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a tag sequence.
///
/// The chain is order-sensitive: `derive(s, &[a, b]) != derive(s, &[b, a])`.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    let mut state = mix(base ^ GOLDEN);
    for &tag in tags {
        state = mix(state.wrapping_add(GOLDEN).wrapping_add(tag));
    }
    state
}

/// A reproducible RNG for the given derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
