//! The Pig-Latin-like scripting language: parsing, schema validation and a
//! canonical renderer.

mod lexer;
mod parser;
mod render;
mod validate;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{AggFunc, ColRef, Predicate};
use crate::schema::Schema;

pub use parser::{parse, parse_predicate};
pub use render::render;
pub use validate::{validate_schema, Diagnostic};

/// A line/column position in script text, both 1-based.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{pos}: syntax error: expected {expected}, found {found}")]
    Syntax {
        pos: Pos,
        expected: String,
        found: String,
    },
    #[error("{pos}: undefined alias '{alias}'")]
    UndefinedAlias { pos: Pos, alias: String },
    #[error("{pos}: alias '{alias}' is already defined")]
    DuplicateAlias { pos: Pos, alias: String },
    #[error("{pos}: unknown aggregate function '{name}'")]
    UnknownAggregate { pos: Pos, name: String },
    #[error("script contains no statements")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub usize);

/// One expression of a `foreach ... generate` list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum GenItem {
    Column(ColRef),
    Agg {
        func: AggFunc,
        bag: ColRef,
        field: Option<ColRef>,
    },
}

impl GenItem {
    pub fn is_aggregate(&self) -> bool {
        matches!(self, GenItem::Agg { .. })
    }
}

impl fmt::Display for GenItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenItem::Column(c) => c.fmt(f),
            GenItem::Agg { func, bag, field } => match field {
                Some(field) => write!(f, "{func}({bag}.{field})"),
                None => write!(f, "{func}({bag})"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum LogicalOp {
    Load { path: String, columns: Vec<String> },
    Foreach { items: Vec<GenItem> },
    Filter { predicate: Predicate },
    Join { keys: Vec<Vec<ColRef>> },
    Group { keys: Vec<ColRef> },
    CoGroup { keys: Vec<Vec<ColRef>> },
    Distinct,
    Union,
    Store { path: String },
}

impl LogicalOp {
    pub fn name(&self) -> &'static str {
        match self {
            LogicalOp::Load { .. } => "load",
            LogicalOp::Foreach { .. } => "foreach",
            LogicalOp::Filter { .. } => "filter",
            LogicalOp::Join { .. } => "join",
            LogicalOp::Group { .. } => "group",
            LogicalOp::CoGroup { .. } => "cogroup",
            LogicalOp::Distinct => "distinct",
            LogicalOp::Union => "union",
            LogicalOp::Store { .. } => "store",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogicalNode {
    pub id: NodeId,
    /// `None` for `store` statements.
    pub alias: Option<String>,
    pub op: LogicalOp,
    pub inputs: Vec<NodeId>,
    pub pos: Pos,
    /// Output schema, filled in by `validate_schema`.
    pub schema: Option<Schema>,
}

/// A DAG of logical operators, one node per statement in script order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LogicalPlan {
    pub nodes: Vec<LogicalNode>,
}

impl LogicalPlan {
    pub fn node(&self, id: NodeId) -> &LogicalNode {
        &self.nodes[id.0]
    }

    /// Producer → consumer pairs with the consumer's input slot.
    pub fn edges(&self) -> Vec<(NodeId, NodeId, usize)> {
        self.nodes
            .iter()
            .flat_map(|n| n.inputs.iter().enumerate().map(move |(s, &i)| (i, n.id, s)))
            .collect()
    }

    pub fn sinks(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, LogicalOp::Store { .. }))
            .map(|n| n.id)
            .collect()
    }

    pub fn count(&self, name: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.name() == name).count()
    }
}

/// Parse and validate in one step, reporting diagnostics as an error.
pub fn compile(script: &str) -> Result<LogicalPlan, CompileError> {
    let mut plan = parse(script)?;
    let diags = validate_schema(&mut plan);
    if diags.is_empty() {
        Ok(plan)
    } else {
        Err(CompileError::Invalid(diags))
    }
}

#[derive(Debug, Clone, Error)]
pub enum CompileError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid script:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}
