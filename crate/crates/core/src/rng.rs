//! The single seedable generator used throughout the crate.
//!
//! ChaCha8 is portable and its output stream is fixed by the `rand_chacha`
//! major version, so traces reproduce across platforms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TvemRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> TvemRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for restart `index` of an experiment seeded with `seed`.
///
/// Each restart reads a distinct ChaCha stream of the base seed, so derived
/// seeds do not collide for distinct indices in practice.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}
