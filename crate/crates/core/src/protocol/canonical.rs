//! Canonical text encoding: JSON with lexicographically sorted object keys
//! and no insignificant whitespace.
//!
//! Signing needs a deterministic byte image, so the same value must encode to
//! the same bytes on every cell regardless of construction order. Floats are
//! rejected outright: no payload field legitimately carries one and their
//! formatting is not portable.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::ProtocolError;

/// Serializes a value to its canonical text form.
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String, ProtocolError> {
    let value =
        serde_json::to_value(value).map_err(|e| ProtocolError::NonEncodable(e.to_string()))?;
    let mut out = String::new();
    write_value(&mut out, &value)?;
    Ok(out)
}

/// Parses a canonical text document back into a value.
pub fn from_canonical_str<T: DeserializeOwned>(s: &str) -> Result<T, ProtocolError> {
    serde_json::from_str(s).map_err(|e| ProtocolError::Decode(e.to_string()))
}

fn write_value(out: &mut String, value: &Value) -> Result<(), ProtocolError> {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                return Err(ProtocolError::NonEncodable(format!(
                    "non-integer number {n}"
                )));
            }
            out.push_str(&n.to_string());
        }
        Value::String(s) => {
            let encoded = serde_json::to_string(s)
                .map_err(|e| ProtocolError::NonEncodable(e.to_string()))?;
            out.push_str(&encoded);
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let encoded = serde_json::to_string(key)
                    .map_err(|e| ProtocolError::NonEncodable(e.to_string()))?;
                out.push_str(&encoded);
                out.push(':');
                write_value(out, &map[*key])?;
            }
            out.push('}');
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_no_whitespace() {
        let v = json!({"zeta": 1, "alpha": {"b": 2, "a": [1, "x"]}, "mid": null});
        assert_eq!(
            to_canonical_string(&v).unwrap(),
            r#"{"alpha":{"a":[1,"x"],"b":2},"mid":null,"zeta":1}"#
        );
    }

    #[test]
    fn empty_map_encodes_as_braces() {
        let v = json!({});
        assert_eq!(to_canonical_string(&v).unwrap(), "{}");
    }

    #[test]
    fn floats_rejected() {
        let v = json!({"x": 1.5});
        assert!(matches!(
            to_canonical_string(&v),
            Err(ProtocolError::NonEncodable(_))
        ));
    }

    #[test]
    fn u64_max_survives() {
        let v = json!({"n": u64::MAX});
        let s = to_canonical_string(&v).unwrap();
        assert_eq!(s, format!(r#"{{"n":{}}}"#, u64::MAX));
        let back: serde_json::Value = from_canonical_str(&s).unwrap();
        assert_eq!(back["n"].as_u64(), Some(u64::MAX));
    }

    #[test]
    fn string_escapes_are_stable() {
        let v = json!({"s": "line\nquote\"slash\\"});
        let s = to_canonical_string(&v).unwrap();
        let back: serde_json::Value = from_canonical_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
