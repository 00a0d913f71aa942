//! Seeded 64-bit FNV-1a, shared by the hashed featurizer and the mock embedder.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the little-endian seed bytes followed by `bytes`.
pub(crate) fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Lowercased alphanumeric tokens. Everything else separates tokens.
pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}
