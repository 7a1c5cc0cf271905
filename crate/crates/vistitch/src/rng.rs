//! Deterministic random-stream derivation.
//!
//! Every stochastic component (episode initialization, camera noise, replay
//! deviations, weight init, shuffling, k-means restarts) draws from its own
//! stream derived from a root seed plus a tuple of indices. Streams are
//! independent ChaCha8 generators, so inserting a draw in one component never
//! shifts the values seen by another, and any single trajectory or batch can
//! be reproduced in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the splitmix64 output permutation.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a root seed with an ordered tuple of stream indices into one 64-bit
/// value. Mixing is sequential, so `mix(s, &[a, b])` and `mix(s, &[b, a])`
/// differ, and each part is diffused through the whole word before the next
/// is folded in.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix(seed);
    for &p in parts {
        acc = splitmix(acc ^ splitmix(p));
    }
    acc
}

/// Builds the ChaCha8 stream identified by `(seed, parts)`.
pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, parts))
}

/// Stream-index salts, one per component, so components with the same
/// numeric indices never collide.
pub mod salt {
    pub const EPISODE: u64 = 0x01;
    pub const NOISE: u64 = 0x02;
    pub const REPLAY: u64 = 0x03;
    pub const INIT: u64 = 0x04;
    pub const SHUFFLE: u64 = 0x05;
    pub const KMEANS: u64 = 0x06;
    pub const EVAL: u64 = 0x07;
    pub const HELDOUT: u64 = 0x08;
    pub const SAMPLE: u64 = 0x09;
}
