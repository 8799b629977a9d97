//! Canonical payload serialization.
//!
//! The output is compact UTF-8 JSON with keys sorted at every level and
//! floats rendered with at most six significant digits and no trailing
//! zeros. Its byte length is the transmission cost of a retrieval, so the
//! format is fixed byte-for-byte.

use alloc::format;
use alloc::string::String;

use crate::types::{KnowledgeEntry, Value};

/// Appends `s` as a JSON string literal.
pub fn write_str(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{08}' => out.push_str("\\b"),
            '\u{0c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Formats a float with up to six significant digits, `%g` style, with
/// trailing zeros removed. Non-finite values become `null`.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    // `{:.5e}` rounds correctly to six significant digits, e.g. "-1.23457e3".
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };

    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if !(-4..6).contains(&exp) {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        out.push('e');
        out.push_str(&format!("{exp}"));
    } else if exp < 0 {
        out.push_str("0.");
        for _ in 0..(-exp - 1) {
            out.push('0');
        }
        out.push_str(digits);
    } else {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            out.push_str(digits);
            for _ in digits.len()..int_len {
                out.push('0');
            }
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    }
    out
}

pub fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Number(x) => out.push_str(&format_number(*x)),
        Value::Quantity { value, unit } => {
            out.push_str("{\"unit\":");
            write_str(out, unit);
            out.push_str(",\"value\":");
            out.push_str(&format_number(*value));
            out.push('}');
        }
        Value::Text(s) => write_str(out, s),
    }
}

/// Serializes the transmitted view of an entry: fields, prediction, reason, t_us.
pub fn write_entry(out: &mut String, e: &KnowledgeEntry) {
    out.push_str("{\"fields\":{");
    // BTreeMap iteration is already in lexicographic byte order.
    for (i, (key, value)) in e.fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_str(out, key);
        out.push(':');
        write_value(out, value);
    }
    out.push_str("},\"prediction\":");
    write_str(out, &e.prediction);
    out.push_str(",\"reason\":");
    write_str(out, &e.reason);
    out.push_str(&format!(",\"t_us\":{}}}", e.timestamp_us));
}

pub fn entry_to_string(e: &KnowledgeEntry) -> String {
    let mut s = String::new();
    write_entry(&mut s, e);
    s
}

/// Assembles the payload envelope from already-serialized section items.
pub fn write_payload<'a, S, L, H>(static_items: S, low_freq: L, high_freq: H, t_us: i64, truncated: bool) -> String
where
    S: IntoIterator<Item = &'a str>,
    L: IntoIterator<Item = &'a str>,
    H: IntoIterator<Item = &'a str>,
{
    fn section<'a>(out: &mut String, name: &str, items: impl IntoIterator<Item = &'a str>) {
        out.push('"');
        out.push_str(name);
        out.push_str("\":[");
        for (i, item) in items.into_iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(item);
        }
        out.push(']');
    }
    let mut out = String::from("{");
    section(&mut out, "high_freq", high_freq);
    out.push(',');
    section(&mut out, "low_freq", low_freq);
    out.push(',');
    section(&mut out, "static", static_items);
    out.push_str(&format!(",\"t_us\":{},\"truncated\":{}}}", t_us, truncated));
    out
}

pub fn empty_envelope(t_us: i64) -> String {
    write_payload([], [], [], t_us, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GeoAnchor;
    use proptest::prelude::*;

    #[test]
    fn numbers() {
        let cases = [
            (0.5, "0.5"),
            (10.0, "10"),
            (-0.0, "0"),
            (1.0 / 3.0, "0.333333"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e6"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-5"),
            (-12.3, "-12.3"),
            (99.999996, "100"),
            (999999.7, "1e6"),
            (2.5e-300, "2.5e-300"),
            (100.0, "100"),
            (f64::NAN, "null"),
        ];
        for (x, want) in cases {
            assert_eq!(format_number(x), want, "formatting {x}");
        }
    }

    #[test]
    fn string_escapes() {
        let mut s = String::new();
        write_str(&mut s, "a\"b\\c\nd\u{1}é");
        assert_eq!(s, "\"a\\\"b\\\\c\\nd\\u0001é\"");
    }

    #[test]
    fn entry_layout() {
        let e = KnowledgeEntry::new(9, GeoAnchor::new("i", 1.0, 2.0), 1_000)
            .with_field("signal_state", "red")
            .with_field("density", 0.5)
            .with_field(
                "velocity",
                Value::Quantity {
                    value: 3.25,
                    unit: "m/s".into(),
                },
            )
            .with_text("sensor report", "");
        assert_eq!(
            entry_to_string(&e),
            r#"{"fields":{"density":0.5,"signal_state":"red","velocity":{"unit":"m/s","value":3.25}},"prediction":"","reason":"sensor report","t_us":1000}"#
        );
    }

    #[test]
    fn empty_envelope_golden() {
        let env = empty_envelope(0);
        assert_eq!(env, r#"{"high_freq":[],"low_freq":[],"static":[],"t_us":0,"truncated":false}"#);
        assert_eq!(env.len(), 69);
    }

    proptest! {
        #[test]
        fn numbers_parse_back_within_six_digits(x in -1e12f64..1e12) {
            let s = format_number(x);
            let back: f64 = s.parse().unwrap();
            let tol = libm::fabs(x) * 5e-6 + 1e-300;
            prop_assert!((back - x).abs() <= tol, "{} -> {}", x, s);
            prop_assert!(!s.contains('.') || !s.split('e').next().unwrap().ends_with('0'));
        }

        #[test]
        fn serialized_entries_are_valid_json(reason in ".{0,40}", value in ".{0,20}") {
            let e = KnowledgeEntry::new(1, GeoAnchor::new("i", 0.0, 0.0), 5)
                .with_field("objects", value.as_str())
                .with_text(reason.as_str(), "p");
            let s = entry_to_string(&e);
            let parsed: serde_json::Value = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(parsed["reason"].as_str().unwrap(), reason.as_str());
            prop_assert_eq!(parsed["fields"]["objects"].as_str().unwrap(), value.as_str());
        }
    }
}
