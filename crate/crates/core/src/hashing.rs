//! SHA-256 helpers for cache keys, checksums and manifest fingerprints.

use sha2::{Digest, Sha256};

/// Hex digest of a sequence of byte strings. Each part is length-prefixed so
/// that `["ab", "c"]` and `["a", "bc"]` hash differently.
pub fn hash_parts(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Uniform draw in `[0, 1)` derived from `(seed, key)`.
pub fn unit_interval(seed: u64, key: &str) -> f64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(key.as_bytes())
        .finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    // 53 high bits give an exactly representable dyadic rational.
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts_are_length_prefixed() {
        assert_ne!(hash_parts(&[b"ab", b"c"]), hash_parts(&[b"a", b"bc"]));
    }

    #[test]
    fn unit_interval_bounds() {
        for i in 0..1000 {
            let u = unit_interval(42, &format!("k{i}"));
            assert!((0.0..1.0).contains(&u));
        }
    }
}
