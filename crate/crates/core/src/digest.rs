//! Content hashing helpers shared by ids, caches and the manifest.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short stable identifier: `prefix` plus the first 12 hex digits of the
/// hash of `parts` joined by an unambiguous separator.
pub fn short_id(prefix: &str, parts: &[&str]) -> String {
    let joined = parts.join("\u{1f}");
    format!("{prefix}-{}", &sha256_hex(joined.as_bytes())[..12])
}

/// 64-bit seed derived from a string, used for per-item generators.
pub fn seed_from(parts: &[&str]) -> u64 {
    let joined = parts.join("\u{1f}");
    let hash = Sha256::digest(joined.as_bytes());
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&hash[..8]);
    u64::from_le_bytes(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_ids_are_stable_and_separator_safe() {
        assert_eq!(short_id("t", &["a", "b"]), short_id("t", &["a", "b"]));
        assert_ne!(short_id("t", &["ab", ""]), short_id("t", &["a", "b"]));
        assert_eq!(short_id("t", &["x"]).len(), 2 + 12);
    }
}
