//! Relation schemas: ordered, possibly nested, named columns.
//!
//! Column names produced by joins are qualified as `alias::column`. A bare
//! reference resolves to an exact name first and then to the unique column
//! whose last `::` segment matches.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnKind {
    Atom,
    Tuple(Schema),
    Bag(Schema),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn atom(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Atom,
        }
    }

    pub fn bag(name: impl Into<String>, inner: Schema) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Bag(inner),
        }
    }

    pub fn tuple(name: impl Into<String>, inner: Schema) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Tuple(inner),
        }
    }

    pub fn inner(&self) -> Option<&Schema> {
        match &self.kind {
            ColumnKind::Atom => None,
            ColumnKind::Tuple(s) | ColumnKind::Bag(s) => Some(s),
        }
    }

    pub fn is_bag(&self) -> bool {
        matches!(self.kind, ColumnKind::Bag(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("column '{0}' not found")]
    NotFound(String),
    #[error("column reference '{0}' is ambiguous")]
    Ambiguous(String),
    #[error("positional reference ${0} is out of range (arity {1})")]
    OutOfRange(usize, usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed schema text {text:?} at byte {pos}")]
pub struct SchemaParseError {
    pub text: String,
    pub pos: usize,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Self {
        Schema { columns }
    }

    pub fn atoms<S: AsRef<str>>(names: &[S]) -> Self {
        Schema::new(names.iter().map(|n| Column::atom(n.as_ref())).collect())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    /// Index of the column a name refers to.
    pub fn resolve(&self, name: &str) -> Result<usize, ResolveError> {
        if let Some(i) = self.columns.iter().position(|c| c.name == name) {
            if self.columns.iter().filter(|c| c.name == name).count() > 1 {
                return Err(ResolveError::Ambiguous(name.to_string()));
            }
            return Ok(i);
        }
        let suffix = format!("::{name}");
        let mut hits = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.name.ends_with(&suffix));
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            (Some(_), Some(_)) => Err(ResolveError::Ambiguous(name.to_string())),
            _ => Err(ResolveError::NotFound(name.to_string())),
        }
    }

    pub fn position(&self, k: usize) -> Result<&Column, ResolveError> {
        self.columns
            .get(k)
            .ok_or(ResolveError::OutOfRange(k, self.columns.len()))
    }

    pub fn column(&self, name: &str) -> Result<&Column, ResolveError> {
        self.resolve(name).map(|i| &self.columns[i])
    }

    /// First duplicated column name, if any.
    pub fn duplicate_name(&self) -> Option<&str> {
        let mut seen = std::collections::HashSet::new();
        self.columns
            .iter()
            .find(|c| !seen.insert(c.name.as_str()))
            .map(|c| c.name.as_str())
    }

    /// Copy with every top-level column renamed to `prefix::name`.
    pub fn prefixed(&self, prefix: &str) -> Schema {
        Schema::new(
            self.columns
                .iter()
                .map(|c| Column {
                    name: format!("{prefix}::{}", c.name),
                    kind: c.kind.clone(),
                })
                .collect(),
        )
    }

    /// Parse the text form produced by `Display`.
    pub fn parse(text: &str) -> Result<Schema, SchemaParseError> {
        let mut p = SchemaParser { text, pos: 0 };
        if text.is_empty() {
            return Ok(Schema::default());
        }
        let s = p.columns(None)?;
        if p.pos != text.len() {
            return Err(p.err());
        }
        Ok(s)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(&c.name)?;
            match &c.kind {
                ColumnKind::Atom => {}
                ColumnKind::Tuple(s) => write!(f, ":({s})")?,
                ColumnKind::Bag(s) => write!(f, ":{{{s}}}")?,
            }
        }
        Ok(())
    }
}

struct SchemaParser<'a> {
    text: &'a str,
    pos: usize,
}

impl SchemaParser<'_> {
    fn err(&self) -> SchemaParseError {
        SchemaParseError {
            text: self.text.to_string(),
            pos: self.pos,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn columns(&mut self, close: Option<u8>) -> Result<Schema, SchemaParseError> {
        let mut cols = Vec::new();
        loop {
            cols.push(self.column()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                c if c == close => return Ok(Schema::new(cols)),
                _ => return Err(self.err()),
            }
        }
    }

    fn column(&mut self) -> Result<Column, SchemaParseError> {
        let start = self.pos;
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_alphanumeric() || b == b'_' || b == b'$' => self.pos += 1,
                Some(b':') if self.text.as_bytes().get(self.pos + 1) == Some(&b':') => self.pos += 2,
                _ => break,
            }
        }
        if self.pos == start {
            return Err(self.err());
        }
        let name = self.text[start..self.pos].to_string();
        if self.peek() != Some(b':') {
            return Ok(Column::atom(name));
        }
        self.pos += 1;
        let (open, close) = match self.peek() {
            Some(b'(') => (b'(', b')'),
            Some(b'{') => (b'{', b'}'),
            _ => return Err(self.err()),
        };
        self.pos += 1;
        let inner = self.columns(Some(close))?;
        self.pos += 1;
        Ok(if open == b'(' {
            Column::tuple(name, inner)
        } else {
            Column::bag(name, inner)
        })
    }
}
