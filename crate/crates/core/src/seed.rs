//! Stable seed derivation for per-item random streams.

/// Mixes a base seed with a tag and an index into an independent seed.
/// FNV-1a over the inputs followed by a splitmix64 finalizer, so results do
/// not depend on platform or std hasher state.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = seed
        .to_le_bytes()
        .into_iter()
        .chain(tag.bytes())
        .chain([0xff])
        .chain(index.to_le_bytes());
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Seed derived from a string key, e.g. a geohash code.
pub fn derive_seed_str(seed: u64, tag: &str, key: &str) -> u64 {
    derive_seed(derive_seed(seed, tag, key.len() as u64), key, 0)
}
