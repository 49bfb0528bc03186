//! Canonical JSON: object keys sorted by their UTF-8 bytes, no insignificant
//! whitespace, integers in base 10, floats rejected.
//!
//! Used for block payloads, ledger lines, wire messages, contract documents
//! and persisted registry state, so every replica produces identical bytes.

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("floating point number {0} cannot be canonically encoded")]
    Float(String),
    #[error("value cannot be represented as JSON: {0}")]
    Unrepresentable(String),
}

/// Canonical bytes of any serializable value.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, EncodingError> {
    let value =
        serde_json::to_value(value).map_err(|e| EncodingError::Unrepresentable(e.to_string()))?;
    value_to_canonical_bytes(&value)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, EncodingError> {
    // The writer only ever emits valid UTF-8.
    to_canonical_bytes(value).map(|b| String::from_utf8(b).expect("canonical JSON is UTF-8"))
}

pub fn value_to_canonical_bytes(value: &Value) -> Result<Vec<u8>, EncodingError> {
    let mut out = Vec::with_capacity(256);
    write_value(value, &mut out)?;
    Ok(out)
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<(), EncodingError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            if n.is_f64() {
                return Err(EncodingError::Float(n.to_string()));
            }
            out.extend_from_slice(n.to_string().as_bytes());
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_value(item, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // serde_json's string escaping is already minimal and deterministic.
    serde_json::to_writer(&mut *out, s).expect("writing to a Vec cannot fail");
}
