//! Keyed random streams.
//!
//! Every stochastic quantity in the pipeline is drawn from a ChaCha stream
//! whose seed is a hash of a tuple of integers (run seed, stream tag, cluster,
//! tile, ...). Draws therefore never depend on evaluation order, which keeps
//! parallel generation and rollouts reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags, one per consumer, so unrelated draws never share a key.
pub mod stream {
    pub const CLUSTER: u64 = 0x01;
    pub const MIXING: u64 = 0x02;
    pub const DETECTOR: u64 = 0x03;
    pub const SPLIT: u64 = 0x04;
    pub const POLICY_INIT: u64 = 0x05;
    pub const SHUFFLE: u64 = 0x06;
    pub const ROLLOUT: u64 = 0x07;
    pub const BASELINE: u64 = 0x08;
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key tuple into one 64-bit seed. Order of parts matters.
pub fn derive_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |h, &p| mix64(h ^ mix64(p)))
}

pub fn keyed_rng(parts: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(parts))
}
