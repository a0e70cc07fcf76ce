//! Deterministic derivation of independent RNG stream seeds.
//!
//! Every randomized stage draws from its own stream, keyed by the
//! master seed, a textual tag, and one or more indices. Adding a new
//! stream kind or consuming more values in one stream never shifts the
//! draws of another, which keeps results reproducible as the code
//! evolves.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a_bytes(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer; diffuses low-entropy inputs across all bits.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stream seed for (master, tag, indices).
pub fn derive_seed_n(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a_bytes(tag.as_bytes());
    for chunk in master.to_le_bytes() {
        h ^= u64::from(chunk);
        h = h.wrapping_mul(FNV_PRIME);
    }
    for &idx in indices {
        for chunk in idx.to_le_bytes() {
            h ^= u64::from(chunk);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    splitmix64(h)
}

/// Stream seed for (master, tag, index); the common single-index case.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    derive_seed_n(master, tag, &[index])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct() {
        let a = derive_seed(42, "pairs", 0);
        assert_ne!(a, derive_seed(42, "pairs", 1));
        assert_ne!(a, derive_seed(42, "bench", 0));
        assert_ne!(a, derive_seed(43, "pairs", 0));
        assert_ne!(derive_seed_n(42, "g", &[1, 2]), derive_seed_n(42, "g", &[2, 1]));
    }

    #[test]
    fn derivation_is_stable() {
        // Regression anchors: these values are part of the determinism
        // contract. If they move, every stored corpus goes stale.
        assert_eq!(fnv1a_bytes(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a_bytes(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(derive_seed(42, "pairs", 7), derive_seed(42, "pairs", 7));
        assert_eq!(derive_seed_n(1, "x", &[2, 3]), derive_seed_n(1, "x", &[2, 3]));
    }
}
