//! Structured documents and their canonical byte encoding.
//!
//! Every digest and signature in the ledger is computed over the canonical
//! form produced here: compact JSON, map keys sorted by their UTF-8 bytes,
//! decimals written without trailing zeros or exponents.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error)]
pub enum DocError {
    #[error("document is not canonicalizable: {0}")]
    NonCanonicalizable(String),
    #[error("malformed document: {0}")]
    Parse(String),
    #[error("document does not match expected shape: {0}")]
    Shape(String),
}

/// A structured document: maps, lists, strings, integers, decimals,
/// booleans and null.
///
/// `Float` exists for values that come from binary floating point sources;
/// it canonicalizes exactly like a decimal with the shortest round-trip
/// digits, and fails for NaN or infinities.
#[derive(Debug, Clone, PartialEq)]
pub enum Doc {
    Null,
    Bool(bool),
    Int(i64),
    Decimal(Decimal),
    Float(f64),
    Str(String),
    List(Vec<Doc>),
    Map(BTreeMap<String, Doc>),
}

impl Default for Doc {
    fn default() -> Self {
        Doc::Map(BTreeMap::new())
    }
}

impl Doc {
    pub fn map() -> Self {
        Doc::Map(BTreeMap::new())
    }

    pub fn get(&self, key: &str) -> Option<&Doc> {
        match self {
            Doc::Map(m) => m.get(key),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Doc::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Doc::Int(i) => Some(*i),
            Doc::Decimal(d) if d.fract().is_zero() => i64::try_from(*d).ok(),
            _ => None,
        }
    }

    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            Doc::Int(i) => Some(Decimal::from(*i)),
            Doc::Decimal(d) => Some(*d),
            Doc::Float(f) => Decimal::from_str(&f.to_string()).ok(),
            _ => None,
        }
    }

    /// Inserts `key` when `self` is a map; no-op otherwise.
    pub fn with(mut self, key: &str, value: impl Into<Doc>) -> Self {
        if let Doc::Map(m) = &mut self {
            m.insert(key.to_string(), value.into());
        }
        self
    }

    /// Canonical bytes of this document.
    pub fn canonical(&self) -> Result<Vec<u8>, DocError> {
        canonicalize(self)
    }

    /// Converts any serializable value into a document.
    pub fn from_serialize<T: Serialize + ?Sized>(value: &T) -> Result<Doc, DocError> {
        let v = serde_json::to_value(value).map_err(|e| DocError::Shape(e.to_string()))?;
        Doc::try_from(v)
    }

    /// Deserializes a typed value out of this document.
    pub fn to_typed<T: DeserializeOwned>(&self) -> Result<T, DocError> {
        serde_json::from_value(self.to_value()?).map_err(|e| DocError::Shape(e.to_string()))
    }

    pub fn to_value(&self) -> Result<serde_json::Value, DocError> {
        use serde_json::Value;
        Ok(match self {
            Doc::Null => Value::Null,
            Doc::Bool(b) => Value::Bool(*b),
            Doc::Int(i) => Value::Number((*i).into()),
            Doc::Decimal(_) | Doc::Float(_) => {
                let text = render_number(self)?;
                Value::Number(
                    serde_json::Number::from_str(&text)
                        .map_err(|e| DocError::NonCanonicalizable(e.to_string()))?,
                )
            }
            Doc::Str(s) => Value::String(s.clone()),
            Doc::List(items) => Value::Array(
                items
                    .iter()
                    .map(Doc::to_value)
                    .collect::<Result<_, _>>()?,
            ),
            Doc::Map(m) => {
                let mut out = serde_json::Map::new();
                for (k, v) in m {
                    out.insert(k.clone(), v.to_value()?);
                }
                Value::Object(out)
            }
        })
    }
}

impl TryFrom<serde_json::Value> for Doc {
    type Error = DocError;

    fn try_from(v: serde_json::Value) -> Result<Self, Self::Error> {
        use serde_json::Value;
        Ok(match v {
            Value::Null => Doc::Null,
            Value::Bool(b) => Doc::Bool(b),
            Value::Number(n) => parse_number(&n.to_string())?,
            Value::String(s) => Doc::Str(s),
            Value::Array(items) => Doc::List(
                items
                    .into_iter()
                    .map(Doc::try_from)
                    .collect::<Result<_, _>>()?,
            ),
            Value::Object(m) => {
                let mut out = BTreeMap::new();
                for (k, v) in m {
                    out.insert(k, Doc::try_from(v)?);
                }
                Doc::Map(out)
            }
        })
    }
}

impl Serialize for Doc {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value()
            .map_err(serde::ser::Error::custom)?
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Doc {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        Doc::try_from(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Doc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match canonicalize(self) {
            Ok(bytes) => f.write_str(&String::from_utf8_lossy(&bytes)),
            Err(e) => write!(f, "<{e}>"),
        }
    }
}

impl From<&str> for Doc {
    fn from(s: &str) -> Self {
        Doc::Str(s.to_string())
    }
}

impl From<String> for Doc {
    fn from(s: String) -> Self {
        Doc::Str(s)
    }
}

impl From<i64> for Doc {
    fn from(i: i64) -> Self {
        Doc::Int(i)
    }
}

impl From<u64> for Doc {
    fn from(i: u64) -> Self {
        match i64::try_from(i) {
            Ok(i) => Doc::Int(i),
            Err(_) => Doc::Decimal(Decimal::from(i)),
        }
    }
}

impl From<bool> for Doc {
    fn from(b: bool) -> Self {
        Doc::Bool(b)
    }
}

impl From<Decimal> for Doc {
    fn from(d: Decimal) -> Self {
        Doc::Decimal(d)
    }
}

impl<T: Into<Doc>> From<Vec<T>> for Doc {
    fn from(items: Vec<T>) -> Self {
        Doc::List(items.into_iter().map(Into::into).collect())
    }
}

impl<T: Into<Doc>> From<Option<T>> for Doc {
    fn from(v: Option<T>) -> Self {
        v.map_or(Doc::Null, Into::into)
    }
}

/// Encodes a document as canonical compact JSON.
pub fn canonicalize(doc: &Doc) -> Result<Vec<u8>, DocError> {
    let mut out = Vec::with_capacity(64);
    write_canonical(doc, &mut out)?;
    Ok(out)
}

/// Canonical bytes of any serializable value.
pub fn canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, DocError> {
    canonicalize(&Doc::from_serialize(value)?)
}

/// Parses JSON bytes into a document. Accepts any valid JSON, canonical or not.
pub fn parse(bytes: &[u8]) -> Result<Doc, DocError> {
    let v: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| DocError::Parse(e.to_string()))?;
    Doc::try_from(v)
}

fn write_canonical(doc: &Doc, out: &mut Vec<u8>) -> Result<(), DocError> {
    match doc {
        Doc::Null => out.extend_from_slice(b"null"),
        Doc::Bool(true) => out.extend_from_slice(b"true"),
        Doc::Bool(false) => out.extend_from_slice(b"false"),
        Doc::Int(i) => out.extend_from_slice(i.to_string().as_bytes()),
        Doc::Decimal(_) | Doc::Float(_) => out.extend_from_slice(render_number(doc)?.as_bytes()),
        Doc::Str(s) => write_string(s, out),
        Doc::List(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(item, out)?;
            }
            out.push(b']');
        }
        Doc::Map(m) => {
            // BTreeMap<String, _> iterates in byte-lexicographic key order.
            out.push(b'{');
            for (i, (k, v)) in m.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(k, out);
                out.push(b':');
                write_canonical(v, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // serde_json's escaping is fixed: `"`, `\`, and control characters only.
    let escaped = serde_json::to_string(s).expect("string serialization is infallible");
    out.extend_from_slice(escaped.as_bytes());
}

fn render_number(doc: &Doc) -> Result<String, DocError> {
    match doc {
        Doc::Decimal(d) => Ok(d.normalize().to_string()),
        Doc::Float(f) => {
            if !f.is_finite() {
                return Err(DocError::NonCanonicalizable(format!("non-finite number {f}")));
            }
            // `{}` on f64 never emits an exponent and picks the shortest
            // digits that round-trip.
            let text = if *f == 0.0 { "0".to_string() } else { f.to_string() };
            Ok(trim_fraction(text))
        }
        _ => unreachable!("render_number called on non-number"),
    }
}

fn trim_fraction(mut text: String) -> String {
    if text.contains('.') {
        while text.ends_with('0') {
            text.pop();
        }
        if text.ends_with('.') {
            text.pop();
        }
    }
    text
}

fn parse_number(text: &str) -> Result<Doc, DocError> {
    let is_integral = !text.contains(['.', 'e', 'E']);
    if is_integral {
        if let Ok(i) = text.parse::<i64>() {
            return Ok(Doc::Int(i));
        }
    }
    let exact = if text.contains(['e', 'E']) {
        Decimal::from_scientific(text).ok()
    } else {
        Decimal::from_str_exact(text).ok()
    };
    if let Some(d) = exact {
        return Ok(Doc::Decimal(d));
    }
    text.parse::<f64>()
        .ok()
        .filter(|f| f.is_finite())
        .map(Doc::Float)
        .ok_or_else(|| DocError::Parse(format!("unrepresentable number {text}")))
}
