//! Path addressing into JSON documents.
//!
//! Canonical text form: dot-separated object keys and bracketed array
//! indices, e.g. `country.leaders[0].name`. A path may start with an index
//! (`[2].id`). Keys that are empty, contain `.`, `[`, `]` or `"`, carry
//! surrounding whitespace, or equal `$` are written as JSON string literals
//! (`"a.b".c`). The root path is written `$`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    Key(String),
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct JsonPath {
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid path '{text}': {reason}")]
pub struct PathParseError {
    pub text: String,
    pub reason: &'static str,
}

impl JsonPath {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_root(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn child(&self, segment: Segment) -> Self {
        let mut segments = self.segments.clone();
        segments.push(segment);
        Self { segments }
    }

    pub fn parse(text: &str) -> Result<Self, PathParseError> {
        text.parse()
    }

    pub fn resolve<'a>(&self, doc: &'a Value) -> Option<&'a Value> {
        self.segments.iter().try_fold(doc, |node, seg| match (seg, node) {
            (Segment::Key(k), Value::Object(map)) => map.get(k),
            (Segment::Index(i), Value::Array(items)) => items.get(*i),
            _ => None,
        })
    }

    pub fn resolve_mut<'a>(&self, doc: &'a mut Value) -> Option<&'a mut Value> {
        self.segments.iter().try_fold(doc, |node, seg| match (seg, node) {
            (Segment::Key(k), Value::Object(map)) => map.get_mut(k),
            (Segment::Index(i), Value::Array(items)) => items.get_mut(*i),
            _ => None,
        })
    }

    /// Position vector in document order: the ordinal of each key within its
    /// object, or the array index. `None` if the path does not resolve.
    pub fn document_position(&self, doc: &Value) -> Option<Vec<usize>> {
        let mut node = doc;
        let mut out = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            match (seg, node) {
                (Segment::Key(k), Value::Object(map)) => {
                    out.push(map.keys().position(|x| x == k)?);
                    node = &map[k];
                }
                (Segment::Index(i), Value::Array(items)) => {
                    out.push(*i);
                    node = items.get(*i)?;
                }
                _ => return None,
            }
        }
        Some(out)
    }
}

fn needs_quotes(key: &str, first: bool) -> bool {
    key.is_empty() || key.trim() != key || key.contains(['.', '[', ']', '"']) || (first && key == "$")
}

impl fmt::Display for JsonPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.segments.is_empty() {
            return f.write_str("$");
        }
        for (i, seg) in self.segments.iter().enumerate() {
            match seg {
                Segment::Index(n) => write!(f, "[{n}]")?,
                Segment::Key(k) => {
                    if i > 0 {
                        f.write_str(".")?;
                    }
                    if needs_quotes(k, i == 0) {
                        f.write_str(&serde_json::to_string(k).map_err(|_| fmt::Error)?)?;
                    } else {
                        f.write_str(k)?;
                    }
                }
            }
        }
        Ok(())
    }
}

impl FromStr for JsonPath {
    type Err = PathParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |reason| PathParseError {
            text: text.to_string(),
            reason,
        };
        if text == "$" {
            return Ok(Self::root());
        }
        if text.is_empty() {
            return Err(err("empty path"));
        }
        let bytes = text.as_bytes();
        let mut segments = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            match bytes[pos] {
                b'[' => {
                    let close = text[pos..].find(']').ok_or_else(|| err("unclosed '['"))? + pos;
                    let digits = &text[pos + 1..close];
                    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                        return Err(err("array index must be a non-negative integer"));
                    }
                    let n = digits.parse().map_err(|_| err("array index out of range"))?;
                    segments.push(Segment::Index(n));
                    pos = close + 1;
                }
                b'.' if !segments.is_empty() => {
                    pos += 1;
                    let (key, next) = parse_key(text, pos).map_err(err)?;
                    segments.push(Segment::Key(key));
                    pos = next;
                }
                _ if segments.is_empty() => {
                    let (key, next) = parse_key(text, pos).map_err(err)?;
                    segments.push(Segment::Key(key));
                    pos = next;
                }
                _ => return Err(err("expected '.' or '[' between segments")),
            }
        }
        Ok(Self { segments })
    }
}

/// Parses a bare or quoted key starting at `pos`; returns it and the index
/// just past it.
fn parse_key(text: &str, pos: usize) -> Result<(String, usize), &'static str> {
    let rest = &text[pos..];
    if rest.starts_with('"') {
        let bytes = rest.as_bytes();
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(1) {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => {
                    let key: String = serde_json::from_str(&rest[..=i]).map_err(|_| "malformed quoted key")?;
                    return Ok((key, pos + i + 1));
                }
                _ => {}
            }
        }
        return Err("unterminated quoted key");
    }
    let end = rest.find(['.', '[', ']', '"']).unwrap_or(rest.len());
    let key = &rest[..end];
    if key.is_empty() {
        return Err("empty key");
    }
    if key.trim() != key {
        return Err("unquoted key has surrounding whitespace");
    }
    Ok((key.to_string(), pos + end))
}

impl Serialize for JsonPath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for JsonPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
