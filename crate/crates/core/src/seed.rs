//! Name-keyed seed derivation.
//!
//! All randomness in a run descends from one root seed. Each consumer asks
//! for a stream by name, so adding a parameter or a data file never shifts
//! the stream of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit seed for `key` under `root`.
pub fn derive(root: u64, key: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(key.as_bytes())))
}

pub fn rng(root: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, key))
}
