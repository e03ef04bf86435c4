//! Stable per-item seed derivation.
//!
//! `derive_seed(global, id)` hashes the id with 64-bit FNV-1a, mixes it with
//! the global seed and finalizes with SplitMix64. The mapping is fixed; it
//! does not depend on the platform, thread count or processing order.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(global: u64, id: &str) -> u64 {
    splitmix64(global ^ fnv1a64(id.as_bytes()).rotate_left(17))
}
