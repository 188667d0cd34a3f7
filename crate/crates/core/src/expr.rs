//! Column references, literals, aggregate functions and filter predicates.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::{format_f64, Number};

/// A reference to a column of an operator's input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ColRef {
    Named(String),
    Positional(usize),
}

impl ColRef {
    pub fn named(s: impl Into<String>) -> Self {
        ColRef::Named(s.into())
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            ColRef::Named(n) => Some(n),
            ColRef::Positional(_) => None,
        }
    }
}

impl fmt::Display for ColRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColRef::Named(n) => f.write_str(n),
            ColRef::Positional(k) => write!(f, "${k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AggFunc {
    Sum,
    Count,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    pub fn parse(name: &str) -> Option<AggFunc> {
        match name.to_ascii_uppercase().as_str() {
            "SUM" => Some(AggFunc::Sum),
            "COUNT" => Some(AggFunc::Count),
            "AVG" => Some(AggFunc::Avg),
            "MIN" => Some(AggFunc::Min),
            "MAX" => Some(AggFunc::Max),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AggFunc::Sum => "SUM",
            AggFunc::Count => "COUNT",
            AggFunc::Avg => "AVG",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
        }
    }
}

impl fmt::Display for AggFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A constant in a predicate. Numbers are kept in a canonical text form so
/// that `3`, `3.0` and `03` compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Literal {
    Num(String),
    Str(String),
}

impl Literal {
    pub fn number(text: &str) -> Option<Literal> {
        let canon = match Number::parse(text)? {
            Number::Int(i) => i.to_string(),
            Number::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => (f as i64).to_string(),
            Number::Float(f) => format_f64(f),
        };
        Some(Literal::Num(canon))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Num(n) => f.write_str(n),
            Literal::Str(s) => write!(f, "'{s}'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operand {
    Col(ColRef),
    Lit(Literal),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Col(c) => c.fmt(f),
            Operand::Lit(l) => l.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    /// The operator obtained by swapping the operands.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Predicate {
    Cmp(Operand, CmpOp, Operand),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    /// Normal form used for equivalence: columns on the left of literal
    /// comparisons, operand pairs ordered, nested conjunctions and
    /// disjunctions flattened, their members sorted by text and deduplicated,
    /// double negation removed.
    pub fn canonical(&self) -> Predicate {
        match self {
            Predicate::Cmp(l, op, r) => {
                let swap = match (l, r) {
                    (Operand::Lit(_), Operand::Col(_)) => true,
                    (Operand::Col(a), Operand::Col(b)) => a.to_string() > b.to_string(),
                    (Operand::Lit(a), Operand::Lit(b)) => a.to_string() > b.to_string(),
                    (Operand::Col(_), Operand::Lit(_)) => false,
                };
                if swap {
                    Predicate::Cmp(r.clone(), op.flip(), l.clone())
                } else {
                    self.clone()
                }
            }
            Predicate::And(items) => Self::junction(items, true),
            Predicate::Or(items) => Self::junction(items, false),
            Predicate::Not(inner) => match inner.canonical() {
                Predicate::Not(x) => *x,
                other => Predicate::Not(Box::new(other)),
            },
        }
    }

    fn junction(items: &[Predicate], and: bool) -> Predicate {
        let mut flat = Vec::new();
        for p in items.iter().map(Predicate::canonical) {
            match p {
                Predicate::And(xs) if and => flat.extend(xs),
                Predicate::Or(xs) if !and => flat.extend(xs),
                other => flat.push(other),
            }
        }
        let mut keyed: Vec<(String, Predicate)> =
            flat.into_iter().map(|p| (p.to_string(), p)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.dedup_by(|a, b| a.0 == b.0);
        let mut flat: Vec<Predicate> = keyed.into_iter().map(|(_, p)| p).collect();
        if flat.len() == 1 {
            return flat.pop().unwrap();
        }
        if and {
            Predicate::And(flat)
        } else {
            Predicate::Or(flat)
        }
    }

    /// Every column referenced, in textual order.
    pub fn columns(&self) -> Vec<&ColRef> {
        let mut out = Vec::new();
        self.visit_columns(&mut |c| out.push(c));
        out
    }

    fn visit_columns<'a>(&'a self, f: &mut dyn FnMut(&'a ColRef)) {
        match self {
            Predicate::Cmp(l, _, r) => {
                for o in [l, r] {
                    if let Operand::Col(c) = o {
                        f(c);
                    }
                }
            }
            Predicate::And(xs) | Predicate::Or(xs) => xs.iter().for_each(|x| x.visit_columns(f)),
            Predicate::Not(x) => x.visit_columns(f),
        }
    }

    /// Rewrite every column reference in place.
    pub fn map_columns<E>(&mut self, f: &mut dyn FnMut(&mut ColRef) -> Result<(), E>) -> Result<(), E> {
        match self {
            Predicate::Cmp(l, _, r) => {
                for o in [l, r] {
                    if let Operand::Col(c) = o {
                        f(c)?;
                    }
                }
                Ok(())
            }
            Predicate::And(xs) | Predicate::Or(xs) => {
                xs.iter_mut().try_for_each(|x| x.map_columns(f))
            }
            Predicate::Not(x) => x.map_columns(f),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Cmp(l, op, r) => write!(f, "{l} {} {r}", op.symbol()),
            Predicate::And(xs) | Predicate::Or(xs) => {
                let sep = if matches!(self, Predicate::And(_)) { " and " } else { " or " };
                f.write_str("(")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    x.fmt(f)?;
                }
                f.write_str(")")
            }
            Predicate::Not(x) => write!(f, "not {x}"),
        }
    }
}
