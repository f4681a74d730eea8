//! Canonical JSON rendering: compact, object keys sorted at every depth.

use serde_json::Value;

/// Render `value` compactly with object keys in byte order.
///
/// Two values that compare equal always render to the same string, which is
/// what payload dedup, tool-message rendering and golden logs depend on.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(key, out);
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::String(s) => write_string(s, out),
        // Null, bool and numbers have a single compact rendering already.
        other => out.push_str(&other.to_string()),
    }
}

fn write_string(s: &str, out: &mut String) {
    // serde_json string escaping is deterministic; reuse it.
    out.push_str(&Value::String(s.to_owned()).to_string());
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_recursively() {
        let v = json!({"b": 1, "a": {"z": [true, null], "m": "x"}});
        assert_eq!(canonical_json(&v), r#"{"a":{"m":"x","z":[true,null]},"b":1}"#);
    }

    #[test]
    fn strings_escaped() {
        let v = json!({"q": "line\n\"quoted\""});
        assert_eq!(canonical_json(&v), r#"{"q":"line\n\"quoted\""}"#);
    }

    #[test]
    fn reparses_to_equal_value() {
        let v = json!({"f": 0.1, "n": -3, "big": 1e300, "s": "é"});
        let back: Value = serde_json::from_str(&canonical_json(&v)).unwrap();
        assert_eq!(back, v);
    }
}
