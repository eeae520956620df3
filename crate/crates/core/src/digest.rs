//! Canonical serialization and content digests.
//!
//! Every fingerprint in this crate is the SHA-256 of a canonical JSON
//! encoding: object keys sorted, compact separators, floats in shortest
//! round-trip form, UTF-8. `serde_json::Value` stores objects in a `BTreeMap`
//! by default, so converting to a `Value` first yields sorted keys for free.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Canonical JSON encoding of any serializable value.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_string(&v).expect("JSON value encodes")
}

/// Hex-encoded SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    to_hex(&hasher.finalize())
}

/// Hex-encoded SHA-256 of the canonical JSON encoding of `value`.
pub fn canonical_digest<T: Serialize>(value: &T) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

fn to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
