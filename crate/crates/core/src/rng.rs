//! Seed derivation for reproducible parallel replications.
//!
//! Every random stream is a ChaCha8 generator keyed by a 64-bit seed. Streams
//! for replication `i` of an experiment with base seed `s` use
//! `derive_seed(s, i)`, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `index` under `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base.wrapping_add(GOLDEN)) ^ index.wrapping_mul(GOLDEN).wrapping_add(1))
}

pub fn stream(seed: u64) -> Rng {
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&mix64(seed.wrapping_add((i as u64).wrapping_mul(GOLDEN))).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Seed drawn from the operating system, for runs without `--seed`.
pub fn entropy_seed() -> u64 {
    use rand::RngCore;
    rand::rngs::OsRng.next_u64()
}
