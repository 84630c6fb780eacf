//! JSON Lines rendering with fixed-precision floats.
//!
//! Every floating-point value is written with exactly six decimal digits,
//! rounded half to even on the exact binary value, so transcripts compare
//! byte for byte across runs.

use serde::Serialize;
use serde_json::Value;

/// `{:.6}` rendering. Rust's float formatting rounds the exact binary value
/// to nearest, ties to even.
pub fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    // Avoid "-0.000000" for tiny negatives.
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_owned()
    } else {
        s
    }
}

/// Serializes `value` as one compact JSON line (no trailing newline).
pub fn to_line<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&value, &mut out);
    Ok(out)
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) if !n.is_f64() => out.push_str(&u.to_string()),
            (_, Some(i), _) if !n.is_f64() => out.push_str(&i.to_string()),
            (_, _, Some(f)) => out.push_str(&fixed6(f)),
            _ => out.push_str(&n.to_string()),
        },
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
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
        Value::Object(map) => {
            out.push('{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(v, out);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn ties_round_to_even() {
        // 2^-7 and 3·2^-7 are exact binary ties at the seventh decimal.
        assert_eq!(fixed6(0.0078125), "0.007812");
        assert_eq!(fixed6(0.0234375), "0.023438");
        assert_eq!(fixed6(0.5), "0.500000");
        assert_eq!(fixed6(1.0), "1.000000");
        assert_eq!(fixed6(-1e-9), "0.000000");
        assert_eq!(fixed6(11234.742857142857), "11234.742857");
    }

    #[test]
    fn floats_fixed_integers_plain() {
        let v =
            json!({"step": 3, "distance": 0.123456789, "neg": -2, "s": "a\"b", "xs": [1.5, null]});
        assert_eq!(
            to_line(&v).unwrap(),
            r#"{"step":3,"distance":0.123457,"neg":-2,"s":"a\"b","xs":[1.500000,null]}"#
        );
    }
}
