//! Deterministic random streams.
//!
//! Every stochastic operation in this crate is seeded explicitly. Parallel
//! or out-of-order execution must not change results, so per-trial
//! generators are derived counter-style: stream `i` of master seed `s` is a
//! pure function of `(s, i)`. Trial `i` therefore produces the same draws
//! whether trials run serially, in parallel, or alone.

use rand::rngs::StdRng;
use rand::SeedableRng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of the splitmix64 generator.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the stream with the given index under a master seed.
///
/// The 256-bit state is filled from a splitmix64 chain keyed by
/// `(master, index)`, so distinct indices give statistically independent
/// streams and the mapping is stable for the life of the crate.
pub fn substream(master: u64, index: u64) -> StdRng {
    let mut state = master ^ index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(0x1234_5678_9ABC_DEF0);
    // decorrelate low-entropy (master, index) pairs before filling the key
    splitmix64(&mut state);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    StdRng::from_seed(key)
}

/// Generator for the master stream itself (stream index 0).
pub fn master_rng(seed: u64) -> StdRng {
    substream(seed, 0)
}
