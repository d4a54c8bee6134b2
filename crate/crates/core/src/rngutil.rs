//! Seed derivation so independent stages (per-layer sampling, codes,
//! per-epoch shuffles) get decorrelated but reproducible streams.

/// splitmix64 finalizer over `base ^ mix(salt)`.
pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
