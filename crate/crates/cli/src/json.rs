//! JSON output: pretty-printed, floats with 17 significant digits, and a
//! content hash that ignores the timestamp.

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::io::{self, Write};

/// Pretty formatter that writes every float as `d.dddddddddddddddde±x`;
/// non-finite values become `null`.
pub struct Sig17<'a>(PrettyFormatter<'a>);

impl Default for Sig17<'_> {
    fn default() -> Self {
        Self(PrettyFormatter::with_indent(b"  "))
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // keep the sign of zero out of golden files
        "0.0000000000000000e0".to_string()
    } else {
        format!("{v:.16e}")
    }
}

impl Formatter for Sig17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        if v.is_finite() {
            w.write_all(fmt_f64(v).as_bytes())
        } else {
            w.write_all(b"null")
        }
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Sig17::default());
    value.serialize(&mut ser).expect("report values serialize");
    out.push(b'\n');
    String::from_utf8(out).expect("utf-8")
}

/// SHA-256 of the formatted document without its `provenance` block, so
/// the hash identifies the results alone.
pub fn content_hash(doc: &Value) -> String {
    let mut d = doc.clone();
    if let Some(o) = d.as_object_mut() {
        o.remove("provenance");
    }
    hex::encode(Sha256::digest(to_string(&d).as_bytes()))
}

/// Stamps the hash and the current time into `provenance`.
pub fn finalize(mut doc: Value) -> Value {
    let hash = content_hash(&doc);
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    if let Some(p) = doc.get_mut("provenance").and_then(Value::as_object_mut) {
        p.insert("content_hash".into(), Value::String(hash));
        p.insert("timestamp".into(), Value::from(now));
    }
    doc
}

/// Removes the timestamp line so two reports can be compared byte by byte.
pub fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"timestamp\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_carry_17_digits() {
        let s = to_string(&json!({"x": 0.1, "y": [1.0, -2.5e-300], "z": f64::NAN, "n": 3}));
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("-2.5000000000000000e-300"));
        assert!(s.contains("\"n\": 3"));
        // round-trips exactly
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64().unwrap(), 0.1);
        assert!(back["z"].is_null());
    }

    #[test]
    fn hash_ignores_timestamp() {
        let doc = json!({"a": 1.5, "provenance": {"seed": 3}});
        let a = finalize(doc.clone());
        let mut b = finalize(doc);
        b["provenance"]["timestamp"] = Value::from(12345u64);
        assert_eq!(content_hash(&a), content_hash(&b));
        assert_eq!(
            a["provenance"]["content_hash"],
            b["provenance"]["content_hash"]
        );
        assert_eq!(
            strip_timestamp(&to_string(&a)),
            strip_timestamp(&to_string(&b))
        );
        let mut c = a.clone();
        c["provenance"]["workers"] = Value::from(4);
        assert_eq!(content_hash(&a), content_hash(&c));
        c["a"] = Value::from(2.5);
        assert_ne!(content_hash(&a), content_hash(&c));
    }
}
