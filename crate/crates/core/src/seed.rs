//! Deterministic seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable child seed for `(master, index)`.
///
/// The mapping is a pure function of its arguments, so job and path seeds do
/// not depend on scheduling or worker count.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let a = mix64(master.wrapping_add(0x9e37_79b9_7f4a_7c15));
    mix64(a ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03).wrapping_add(0x2545_f491_4f6c_dd1d))
}

/// ChaCha8 generator seeded from a 64-bit value.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
