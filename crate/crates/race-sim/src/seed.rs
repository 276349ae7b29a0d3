//! Counter-based seed derivation for reproducible parallel Monte Carlo.
//!
//! Every trial owns an independent ChaCha stream whose seed is a pure
//! function of the master seed and the trial's index tuple, so results do
//! not depend on worker count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and an index tuple by folding each
/// part through SplitMix64.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    let mut state = mix(master);
    for &part in parts {
        state = mix(state ^ mix(part));
    }
    state
}

/// ChaCha8 stream for the given index tuple.
pub fn rng(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, parts))
}
