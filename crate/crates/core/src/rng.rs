//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator whose key is
//! derived from the user seed and a purpose tag, so streams never alias and
//! do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_INIT: u64 = 0x696e_6974;
pub const TAG_SHUFFLE: u64 = 0x7368_7566;
pub const TAG_SPLIT: u64 = 0x7370_6c74;
pub const TAG_COMBO: u64 = 0x636f_6d62;
pub const TAG_DATA: u64 = 0x6461_7461;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `seed` under `tag`. Stable across platforms and releases.
pub fn derive_seed(seed: u64, tag: u64, parts: &[u64]) -> u64 {
    let mut h = mix64(seed ^ mix64(tag));
    for &p in parts {
        h = mix64(h ^ mix64(p.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    // length terminator so (a) and (a, 0) differ
    mix64(h ^ parts.len() as u64)
}

pub fn stream(seed: u64, tag: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, parts))
}
