//! Canonical JSON: keys sorted at every level, no whitespace, floats in
//! shortest round-trip form. Every node must produce the same bytes for the
//! same block, so this writer does not depend on map ordering in serde_json.

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SerializationError {
    #[error("field `{0}` is not a finite number")]
    NonFinite(&'static str),
    #[error("serialization failed: {0}")]
    Serde(String),
}

pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, SerializationError> {
    let value = serde_json::to_value(value).map_err(|e| SerializationError::Serde(e.to_string()))?;
    let mut out = Vec::new();
    write_value(&value, &mut out);
    Ok(out)
}

pub(crate) fn write_value(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        Value::Number(n) => out.extend_from_slice(n.to_string().as_bytes()),
        Value::String(s) => {
            out.extend_from_slice(serde_json::to_string(s).expect("strings always serialize").as_bytes())
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend_from_slice(serde_json::to_string(key).expect("keys serialize").as_bytes());
                out.push(b':');
                write_value(&map[key], out);
            }
            out.push(b'}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_nested_keys_without_whitespace() {
        let v = json!({"b": 1, "a": {"z": [1.5, "x"], "c": null}});
        assert_eq!(to_canonical_bytes(&v).unwrap(), br#"{"a":{"c":null,"z":[1.5,"x"]},"b":1}"#);
    }

    #[test]
    fn floats_shortest_form() {
        let v = json!({"d": 120.0, "t": 1616499571.082045, "i": 7u64});
        assert_eq!(
            String::from_utf8(to_canonical_bytes(&v).unwrap()).unwrap(),
            r#"{"d":120.0,"i":7,"t":1616499571.082045}"#
        );
    }

    #[test]
    fn escapes_strings() {
        let v = json!({"k\"": "line\nbreak"});
        assert_eq!(to_canonical_bytes(&v).unwrap(), br#"{"k\"":"line\nbreak"}"#);
    }
}
