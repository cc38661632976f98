//! Reproducible random streams.
//!
//! Every consumer draws from `stream(seed, purpose, index)`: a ChaCha8
//! generator keyed by a SplitMix64 expansion of `(seed, purpose)`, positioned
//! on the 64-bit stream `index`. Streams for different indices or purposes
//! never overlap, and a path's stream does not depend on which worker
//! generates it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Lévy increments, jump times and sizes.
    Path = 1,
    /// Node-mark Bernoulli draws and skeleton mark positions.
    Marks = 2,
    /// Galton–Watson offspring.
    Tree = 3,
    /// Galton–Watson node and edge marks.
    TreeMarks = 4,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut state = seed ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
