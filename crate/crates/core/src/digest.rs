//! Stable content digests used by snapshots and the audit trail.

use sha2::{Digest, Sha256};

/// Name recorded alongside every digest.
pub const DIGEST_ALGORITHM: &str = "sha256";

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
