//! Canonical JSON: UTF-8, sorted object keys, no insignificant whitespace.
//!
//! Everything that has to be byte-identical across runs (event log lines,
//! cassette request hashes) goes through here.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serialize `value` canonically.
///
/// Struct fields are routed through [`serde_json::Value`], whose object map
/// is ordered by key, so the output does not depend on declaration order.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Lower-case hex SHA-256 of the canonical form of `value`.
pub fn canonical_hash<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let s = to_canonical_string(value)?;
    Ok(hex::encode(Sha256::digest(s.as_bytes())))
}
