//! Canonical JSON: object keys sorted, no insignificant whitespace.

use serde::Serialize;
use serde_json::Value;

/// serde_json's default map is ordered, so going through `Value` sorts keys.
pub fn canonical<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Re-encodes JSON text canonically.
pub fn canonicalize(text: &str) -> serde_json::Result<String> {
    let v: Value = serde_json::from_str(text)?;
    serde_json::to_string(&v)
}
