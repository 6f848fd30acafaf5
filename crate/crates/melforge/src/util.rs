//! Small shared helpers.

/// FNV-1a 64-bit hash; used for per-parameter RNG streams and file
/// checksums.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

/// Round an f64 to the nearest f32-representable value. Persistent training
/// state lives at f32 precision so checkpoints round-trip bitwise.
pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}
