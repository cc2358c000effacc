//! RFC 8785 (JCS) canonical encoding and SHA-256 digests.
//!
//! Canonical bytes feed the preflight hash `H(C({action, payload, impact}))`
//! and the state-witness hash `H(C(witness))`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest as _, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CanonicalError {
    #[error("non-finite number cannot be canonicalized")]
    NonFinite,
    #[error("number is not representable as an IEEE 754 double")]
    Unrepresentable,
}

/// RFC 8785 byte sequence for one JSON value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalBytes(Vec<u8>);

impl CanonicalBytes {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn as_str(&self) -> &str {
        // Built exclusively from `String` pushes.
        std::str::from_utf8(&self.0).expect("canonical bytes are UTF-8")
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.0)
    }
}

/// Lowercase hex SHA-256, always 64 characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Digest(String);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(hex::encode(Sha256::digest(bytes)))
    }

    /// Accepts only well-formed digests (64 chars of `[0-9a-f]`).
    pub fn parse(s: &str) -> Option<Self> {
        is_digest_hex(s).then(|| Digest(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn is_digest_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub fn canonicalize(value: &Value) -> Result<CanonicalBytes, CanonicalError> {
    let mut out = String::new();
    write_value(value, &mut out)?;
    Ok(CanonicalBytes(out.into_bytes()))
}

/// `H(C({action, payload, impact}))`.
pub fn preflight_hash(action: &str, payload: &Value, impact: &Value) -> Result<Digest, CanonicalError> {
    let triple = serde_json::json!({
        "action": action,
        "payload": payload,
        "impact": impact,
    });
    Ok(canonicalize(&triple)?.digest())
}

/// `H(C(witness))`.
pub fn witness_hash(witness: &Value) -> Result<Digest, CanonicalError> {
    Ok(canonicalize(witness)?.digest())
}

fn write_value(value: &Value, out: &mut String) -> Result<(), CanonicalError> {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            let f = n.as_f64().ok_or(CanonicalError::Unrepresentable)?;
            out.push_str(&number_to_string(f)?);
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| utf16_cmp(a.0, b.0));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(k, out);
                out.push(':');
                write_value(v, out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

// Member names sort by UTF-16 code units, not by UTF-8 bytes.
fn utf16_cmp(a: &str, b: &str) -> Ordering {
    a.encode_utf16().cmp(b.encode_utf16())
}

fn write_string(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\u{8}' => out.push_str("\\b"),
            '\u{9}' => out.push_str("\\t"),
            '\u{a}' => out.push_str("\\n"),
            '\u{c}' => out.push_str("\\f"),
            '\u{d}' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// ECMAScript `Number.prototype.toString` for finite doubles, including
/// round-half-even selection among shortest digit strings.
pub fn number_to_string(f: f64) -> Result<String, CanonicalError> {
    if !f.is_finite() {
        return Err(CanonicalError::NonFinite);
    }
    if f == 0.0 {
        return Ok("0".to_owned());
    }
    Ok(ryu_js::Buffer::new().format_finite(f).to_owned())
}
