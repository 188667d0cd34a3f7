//! Record values and the line-oriented record codec used by every dataset.
//!
//! A record is one UTF-8 line, fields separated by a tab. Top-level atoms are
//! written verbatim unless they begin with one of the structural characters
//! `{`, `(` or `%`. Nested values use `{(a,b),(c,d)}` for bags and `(a,b)` for
//! tuples; atoms inside them are percent-escaped so the structure stays
//! unambiguous.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

/// One field value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Atom(String),
    Tuple(Vec<Value>),
    Bag(Vec<Vec<Value>>),
}

pub type Row = Vec<Value>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("value contains a tab or newline and cannot be stored: {0:?}")]
    Unstorable(String),
    #[error("malformed nested value at byte {pos} of {text:?}")]
    Malformed { text: String, pos: usize },
}

impl Value {
    pub fn atom(s: impl Into<String>) -> Self {
        Value::Atom(s.into())
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Value::Atom(s) => Some(s),
            _ => None,
        }
    }

    /// Numeric view of an atom: integers stay exact, everything else goes
    /// through `f64`.
    pub fn as_number(&self) -> Option<Number> {
        self.as_atom().and_then(Number::parse)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Atom(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Atom(s)
    }
}

/// A parsed numeric atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Number {
    Int(i64),
    Float(f64),
}

impl Number {
    pub fn parse(s: &str) -> Option<Number> {
        let t = s.trim();
        if t.is_empty() {
            return None;
        }
        if let Ok(i) = t.parse::<i64>() {
            return Some(Number::Int(i));
        }
        match t.parse::<f64>() {
            Ok(f) if f.is_finite() => Some(Number::Float(f)),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Number::Int(i) => i as f64,
            Number::Float(f) => f,
        }
    }

    pub fn cmp_num(self, other: Number) -> Ordering {
        match (self, other) {
            (Number::Int(a), Number::Int(b)) => a.cmp(&b),
            (a, b) => a.as_f64().partial_cmp(&b.as_f64()).unwrap_or(Ordering::Equal),
        }
    }
}

/// Shortest round-trip rendering of a float, integral values without a
/// fractional part.
pub fn format_f64(f: f64) -> String {
    if f == 0.0 {
        return "0".to_string();
    }
    format!("{f}")
}

const ESCAPED: [char; 9] = ['%', '(', ')', '{', '}', ',', '\t', '\n', '\r'];

fn escape_atom(out: &mut String, s: &str) {
    for c in s.chars() {
        if ESCAPED.contains(&c) {
            let _ = write!(out, "%{:02X}", c as u32);
        } else {
            out.push(c);
        }
    }
}

fn unescape_atom(s: &str) -> Result<String, CodecError> {
    if !s.contains('%') {
        return Ok(s.to_string());
    }
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3).ok_or_else(|| CodecError::Malformed {
                text: s.to_string(),
                pos: i,
            })?;
            let b = u8::from_str_radix(hex, 16).map_err(|_| CodecError::Malformed {
                text: s.to_string(),
                pos: i,
            })?;
            out.push(b);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| CodecError::Malformed {
        text: s.to_string(),
        pos: 0,
    })
}

fn encode_nested(out: &mut String, v: &Value) {
    match v {
        Value::Atom(s) => escape_atom(out, s),
        Value::Tuple(items) => encode_tuple(out, items),
        Value::Bag(tuples) => {
            out.push('{');
            for (i, t) in tuples.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                encode_tuple(out, t);
            }
            out.push('}');
        }
    }
}

fn encode_tuple(out: &mut String, items: &[Value]) {
    out.push('(');
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        encode_nested(out, item);
    }
    out.push(')');
}

/// Append the field encoding of `v` to `out`.
pub fn encode_field(out: &mut String, v: &Value) -> Result<(), CodecError> {
    match v {
        Value::Atom(s) => {
            if s.contains(['\t', '\n', '\r']) {
                return Err(CodecError::Unstorable(s.clone()));
            }
            if s.starts_with(['{', '(', '%']) {
                escape_atom(out, s);
            } else {
                out.push_str(s);
            }
        }
        other => encode_nested(out, other),
    }
    Ok(())
}

/// Append a full record (without the trailing newline) to `out`.
pub fn encode_row_into(out: &mut String, row: &[Value]) -> Result<(), CodecError> {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        encode_field(out, v)?;
    }
    Ok(())
}

pub fn encode_row(row: &[Value]) -> Result<String, CodecError> {
    let mut s = String::new();
    encode_row_into(&mut s, row)?;
    Ok(s)
}

/// Decode one field of a record line.
pub fn decode_field(s: &str) -> Result<Value, CodecError> {
    match s.as_bytes().first() {
        Some(b'{') | Some(b'(') => {
            let mut p = NestedParser { text: s, pos: 0 };
            let v = p.value()?;
            if p.pos != s.len() {
                return Err(p.err());
            }
            Ok(v)
        }
        Some(b'%') => Ok(Value::Atom(unescape_atom(s)?)),
        _ => Ok(Value::Atom(s.to_string())),
    }
}

/// Decode a record line into a row of exactly `arity` fields, padding missing
/// trailing fields with empty atoms and dropping surplus ones.
pub fn decode_row(line: &str, arity: usize) -> Result<Row, CodecError> {
    let mut row = Vec::with_capacity(arity);
    if arity == 0 {
        return Ok(row);
    }
    for field in line.split('\t').take(arity) {
        row.push(decode_field(field)?);
    }
    while row.len() < arity {
        row.push(Value::Atom(String::new()));
    }
    Ok(row)
}

/// Decode every field of a record line.
pub fn decode_row_all(line: &str) -> Result<Row, CodecError> {
    line.split('\t').map(decode_field).collect()
}

struct NestedParser<'a> {
    text: &'a str,
    pos: usize,
}

impl NestedParser<'_> {
    fn err(&self) -> CodecError {
        CodecError::Malformed {
            text: self.text.to_string(),
            pos: self.pos,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> Result<(), CodecError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err())
        }
    }

    fn value(&mut self) -> Result<Value, CodecError> {
        match self.peek() {
            Some(b'{') => {
                self.pos += 1;
                let mut tuples = Vec::new();
                if self.peek() == Some(b'}') {
                    self.pos += 1;
                    return Ok(Value::Bag(tuples));
                }
                loop {
                    tuples.push(self.tuple()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b'}') => {
                            self.pos += 1;
                            return Ok(Value::Bag(tuples));
                        }
                        _ => return Err(self.err()),
                    }
                }
            }
            Some(b'(') => Ok(Value::Tuple(self.tuple()?)),
            _ => {
                // Tuples always hold at least one field, so `()` is one empty atom.
                let start = self.pos;
                while let Some(b) = self.peek() {
                    if matches!(b, b',' | b')' | b'}' | b'(' | b'{') {
                        break;
                    }
                    self.pos += 1;
                }
                Ok(Value::Atom(unescape_atom(&self.text[start..self.pos])?))
            }
        }
    }

    fn tuple(&mut self) -> Result<Vec<Value>, CodecError> {
        self.expect(b'(')?;
        let mut items = Vec::new();
        loop {
            items.push(self.value()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(items);
                }
                _ => return Err(self.err()),
            }
        }
    }
}
