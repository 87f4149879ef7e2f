//! Deterministic, portable random streams.
//!
//! A single root seed is split into named streams so that, e.g., detection
//! outcomes at frame `t` are identical no matter which scheduling policy is
//! running (common random numbers across policy comparisons). Streams are
//! derived by hashing the root seed, a stream tag, and optional integer keys
//! into a ChaCha12 seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix_bytes(state: &mut u64, bytes: &[u8]) {
    for chunk in bytes.chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        *state ^= u64::from_le_bytes(word);
        splitmix64(state);
    }
}

/// RNG for the stream `(seed, tag, keys)`.
///
/// Distinct `(tag, keys)` tuples yield independent streams; identical tuples
/// yield identical streams on every platform.
pub fn stream(seed: u64, tag: &str, keys: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    splitmix64(&mut state);
    mix_bytes(&mut state, tag.as_bytes());
    for &k in keys {
        state ^= k;
        splitmix64(&mut state);
    }
    let mut material = [0u8; 32];
    for chunk in material.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(material)
}
