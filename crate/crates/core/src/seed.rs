//! Reproducible per-path seeding.
//!
//! A master seed and a path index are mixed with the SplitMix64 finalizer
//! into a 64-bit path seed, which keys a ChaCha12 stream. For a fixed master
//! the map `index -> seed` is a bijection on `u64`, so distinct paths never
//! share a stream, and every path's randomness is independent of which
//! thread simulates it.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Identifier recorded in result metadata.
pub const RNG_ALGORITHM: &str = "splitmix64-derive/chacha12";

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for path `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master).wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// The generator owned by one path.
pub fn path_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Generator for sub-stream `index` of `master` (shorthand for
/// `path_rng(derive_seed(master, index))`).
pub fn stream(master: u64, index: u64) -> ChaCha12Rng {
    path_rng(derive_seed(master, index))
}
