//! Deterministic seed derivation.
//!
//! Every replication gets its own generator, seeded from the master seed and
//! the replication coordinates by a counter scheme. Identical inputs produce
//! identical streams on every platform, and distinct coordinates produce
//! statistically independent streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function; the standard 64-bit finalizer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 256-bit generator seed from `(master, stream, replication)`.
pub fn derive_seed(master: u64, stream: u64, replication: u64) -> [u8; 32] {
    let mut state = master;
    // fold the coordinates in, then run the counter
    let _ = splitmix64(&mut state);
    state ^= stream.wrapping_mul(0xA076_1D64_78BD_642F);
    let _ = splitmix64(&mut state);
    state ^= replication.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    seed
}

/// The crate-wide generator: ChaCha with a derived seed.
pub fn replication_rng(master: u64, stream: u64, replication: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, stream, replication))
}
