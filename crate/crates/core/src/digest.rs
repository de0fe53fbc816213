use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{GmpError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Canonical TOML rendering of a serializable value.
pub fn canonical_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| GmpError::Serialization(e.to_string()))
}

/// SHA-256 of the canonical TOML rendering.
pub fn config_digest<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_toml(value)?.as_bytes()))
}
