//! Deterministic RNG stream derivation.
//!
//! Every randomized task (bootstrap replicate, simulation replicate) owns a
//! private stream derived from the user seed and the task's index path, so
//! parallel scheduling cannot change results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an RNG from a seed and a hierarchical index path.
///
/// `stream(seed, &[i])` and `stream(seed, &[i, j])` are independent streams
/// for all distinct index paths.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &idx in path {
        state = splitmix64(state ^ splitmix64(idx.wrapping_add(0x51ed_270b)));
    }
    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
