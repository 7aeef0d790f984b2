//! Stable 64-bit hashing for seed derivation. `std`'s hasher is not
//! guaranteed stable across releases; FNV-1a is, and is cheap.

pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for byte in *part {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash ^= 0xff; // separator so ("ab","c") != ("a","bc")
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
