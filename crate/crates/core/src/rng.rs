//! Deterministic substream RNG derivation.
//!
//! Every stochastic routine in the crate takes an explicit 64-bit seed and
//! derives independent streams from it, so identical inputs always produce
//! identical outputs. Streams are keyed by index: permuting stream indices
//! permutes the resulting generators exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 generator for substream `stream` of master seed `seed`.
///
/// The 256-bit ChaCha key is expanded from (seed, stream) with SplitMix64,
/// so nearby seeds and stream indices still yield unrelated states.
pub fn substream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut state = seed ^ stream.wrapping_mul(0xA24B_AED4_963E_E407);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
