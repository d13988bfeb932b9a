//! Deterministic seed derivation.
//!
//! Every randomized stage derives its own stream from (base seed, tag), so
//! stages stay reproducible independently of each other and of iteration
//! order.

use sha2::{Digest, Sha256};

/// Derive a sub-seed from a base seed and a textual tag.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields >= 8 bytes"))
}
