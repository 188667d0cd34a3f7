//! Physical plans: DAGs of physical operators with normalized parameters,
//! their lowering from logical plans, and their division into MapReduce jobs.

mod jobs;
mod lower;
mod text;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{AggFunc, Predicate};
use crate::schema::Schema;

pub use jobs::{contract, execution_order, split_into_jobs, JobId, MapReduceJob, Workflow, WorkflowId};
pub use lower::to_physical;
pub use text::{parse_plan, render_plan, PlanTextError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpId(pub u32);

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Load,
    Store,
    Project,
    Filter,
    Join,
    Group,
    CoGroup,
    Distinct,
    Union,
    Split,
    Aggregate,
}

impl OpKind {
    pub const ALL: [OpKind; 11] = [
        OpKind::Load,
        OpKind::Store,
        OpKind::Project,
        OpKind::Filter,
        OpKind::Join,
        OpKind::Group,
        OpKind::CoGroup,
        OpKind::Distinct,
        OpKind::Union,
        OpKind::Split,
        OpKind::Aggregate,
    ];

    /// Operators that need a shuffle and so start a reduce phase.
    pub fn is_shuffle(self) -> bool {
        matches!(self, OpKind::Join | OpKind::Group | OpKind::CoGroup | OpKind::Distinct)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Load => "Load",
            OpKind::Store => "Store",
            OpKind::Project => "Project",
            OpKind::Filter => "Filter",
            OpKind::Join => "Join",
            OpKind::Group => "Group",
            OpKind::CoGroup => "CoGroup",
            OpKind::Distinct => "Distinct",
            OpKind::Union => "Union",
            OpKind::Split => "Split",
            OpKind::Aggregate => "Aggregate",
        }
    }

    pub fn parse(s: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One output expression of an Aggregate operator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AggItem {
    Column(String),
    Call {
        func: AggFunc,
        bag: String,
        field: Option<String>,
    },
}

impl fmt::Display for AggItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggItem::Column(c) => f.write_str(c),
            AggItem::Call { func, bag, field: Some(x) } => write!(f, "{func}({bag}.{x})"),
            AggItem::Call { func, bag, field: None } => write!(f, "{func}({bag})"),
        }
    }
}

/// Operator parameters in canonical form. Column names are exact names in
/// the schema of the corresponding input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpParams {
    Load { path: String },
    Store { path: String },
    Project { columns: Vec<String> },
    Filter { predicate: Predicate },
    Join { keys: Vec<Vec<String>> },
    Group { keys: Vec<String> },
    CoGroup { keys: Vec<Vec<String>> },
    Distinct,
    Union,
    Split,
    Aggregate { items: Vec<AggItem> },
}

impl OpParams {
    pub fn kind(&self) -> OpKind {
        match self {
            OpParams::Load { .. } => OpKind::Load,
            OpParams::Store { .. } => OpKind::Store,
            OpParams::Project { .. } => OpKind::Project,
            OpParams::Filter { .. } => OpKind::Filter,
            OpParams::Join { .. } => OpKind::Join,
            OpParams::Group { .. } => OpKind::Group,
            OpParams::CoGroup { .. } => OpKind::CoGroup,
            OpParams::Distinct => OpKind::Distinct,
            OpParams::Union => OpKind::Union,
            OpParams::Split => OpKind::Split,
            OpParams::Aggregate { .. } => OpKind::Aggregate,
        }
    }

    /// Column names this operator reads from input `slot`.
    pub fn referenced_columns(&self, slot: usize) -> Vec<String> {
        match self {
            OpParams::Project { columns } if slot == 0 => columns.clone(),
            OpParams::Filter { predicate } if slot == 0 => predicate
                .columns()
                .into_iter()
                .filter_map(|c| c.name().map(str::to_string))
                .collect(),
            OpParams::Join { keys } | OpParams::CoGroup { keys } => {
                keys.get(slot).cloned().unwrap_or_default()
            }
            OpParams::Group { keys } if slot == 0 => keys.clone(),
            OpParams::Aggregate { items } if slot == 0 => items
                .iter()
                .map(|i| match i {
                    AggItem::Column(c) => c.clone(),
                    AggItem::Call { bag, .. } => bag.clone(),
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalOp {
    pub id: OpId,
    pub params: OpParams,
    /// Output schema.
    pub schema: Schema,
}

impl PhysicalOp {
    pub fn kind(&self) -> OpKind {
        self.params.kind()
    }

    pub fn path(&self) -> Option<&str> {
        match &self.params {
            OpParams::Load { path } | OpParams::Store { path } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: OpId,
    pub to: OpId,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan contains a cycle")]
    Cycle,
    #[error("operator {0} has an invalid number of inputs or outputs for its kind")]
    Arity(OpId),
    #[error("operator {0} has missing or duplicate input slots")]
    Slots(OpId),
    #[error("edge references unknown operator {0}")]
    UnknownOp(OpId),
    #[error("operator {op} references column '{column}' missing from its input")]
    Column { op: OpId, column: String },
}

/// A DAG of physical operators.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalPlan {
    pub ops: BTreeMap<OpId, PhysicalOp>,
    pub edges: BTreeSet<Edge>,
}

impl PhysicalPlan {
    pub fn op(&self, id: OpId) -> &PhysicalOp {
        &self.ops[&id]
    }

    pub fn next_id(&self) -> OpId {
        OpId(self.ops.keys().next_back().map_or(1, |k| k.0 + 1))
    }

    pub fn insert(&mut self, id: OpId, params: OpParams, schema: Schema) -> OpId {
        self.ops.insert(id, PhysicalOp { id, params, schema });
        id
    }

    pub fn add(&mut self, params: OpParams, schema: Schema) -> OpId {
        let id = self.next_id();
        self.insert(id, params, schema)
    }

    pub fn connect(&mut self, from: OpId, to: OpId, slot: usize) {
        self.edges.insert(Edge { from, to, slot });
    }

    /// Remove an operator and every edge touching it.
    pub fn remove(&mut self, id: OpId) {
        self.ops.remove(&id);
        self.edges.retain(|e| e.from != id && e.to != id);
    }

    /// Producers feeding `id`, ordered by input slot.
    pub fn inputs(&self, id: OpId) -> Vec<OpId> {
        let mut v: Vec<&Edge> = self.edges.iter().filter(|e| e.to == id).collect();
        v.sort_by_key(|e| e.slot);
        v.into_iter().map(|e| e.from).collect()
    }

    /// Consumers of `id` with the slot they read it on.
    pub fn consumers(&self, id: OpId) -> Vec<(OpId, usize)> {
        self.edges
            .iter()
            .filter(|e| e.from == id)
            .map(|e| (e.to, e.slot))
            .collect()
    }

    /// Distinct successor operators in id order.
    pub fn successors(&self, id: OpId) -> Vec<OpId> {
        let set: BTreeSet<OpId> = self.edges.iter().filter(|e| e.from == id).map(|e| e.to).collect();
        set.into_iter().collect()
    }

    pub fn ids_of(&self, kind: OpKind) -> Vec<OpId> {
        self.ops.values().filter(|o| o.kind() == kind).map(|o| o.id).collect()
    }

    pub fn loads(&self) -> Vec<OpId> {
        self.ids_of(OpKind::Load)
    }

    pub fn stores(&self) -> Vec<OpId> {
        self.ids_of(OpKind::Store)
    }

    /// Schema of the data arriving at `id` on `slot`.
    pub fn input_schema(&self, id: OpId, slot: usize) -> Option<&Schema> {
        self.edges
            .iter()
            .find(|e| e.to == id && e.slot == slot)
            .map(|e| &self.op(e.from).schema)
    }

    /// Operators in a topological order, ties broken by id.
    pub fn topo_order(&self) -> Result<Vec<OpId>, PlanError> {
        let mut indeg: BTreeMap<OpId, usize> = self.ops.keys().map(|&k| (k, 0)).collect();
        for e in &self.edges {
            *indeg.get_mut(&e.to).ok_or(PlanError::UnknownOp(e.to))? += 1;
            if !self.ops.contains_key(&e.from) {
                return Err(PlanError::UnknownOp(e.from));
            }
        }
        let mut ready: BTreeSet<OpId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&k, _)| k).collect();
        let mut out = Vec::with_capacity(self.ops.len());
        while let Some(id) = ready.pop_first() {
            out.push(id);
            for e in self.edges.iter().filter(|e| e.from == id) {
                let d = indeg.get_mut(&e.to).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(e.to);
                }
            }
        }
        if out.len() == self.ops.len() {
            Ok(out)
        } else {
            Err(PlanError::Cycle)
        }
    }

    /// `id` together with everything upstream of it.
    pub fn ancestors(&self, id: OpId) -> BTreeSet<OpId> {
        self.closure(id, |e| (e.to, e.from))
    }

    /// `id` together with everything downstream of it.
    pub fn descendants(&self, id: OpId) -> BTreeSet<OpId> {
        self.closure(id, |e| (e.from, e.to))
    }

    fn closure(&self, id: OpId, dir: impl Fn(&Edge) -> (OpId, OpId)) -> BTreeSet<OpId> {
        let mut seen = BTreeSet::from([id]);
        let mut queue = VecDeque::from([id]);
        while let Some(n) = queue.pop_front() {
            for e in &self.edges {
                let (a, b) = dir(e);
                if a == n && seen.insert(b) {
                    queue.push_back(b);
                }
            }
        }
        seen
    }

    /// The sub-plan induced by `keep`.
    pub fn restricted(&self, keep: &BTreeSet<OpId>) -> PhysicalPlan {
        PhysicalPlan {
            ops: self
                .ops
                .iter()
                .filter(|(k, _)| keep.contains(k))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
            edges: self
                .edges
                .iter()
                .filter(|e| keep.contains(&e.from) && keep.contains(&e.to))
                .copied()
                .collect(),
        }
    }

    /// Drop operators whose output never reaches a Store.
    pub fn prune_dead(&mut self) {
        loop {
            let dead: Vec<OpId> = self
                .ops
                .values()
                .filter(|o| o.kind() != OpKind::Store && !self.edges.iter().any(|e| e.from == o.id))
                .map(|o| o.id)
                .collect();
            if dead.is_empty() {
                return;
            }
            for id in dead {
                self.remove(id);
            }
        }
    }

    /// Number of operators that are neither Loads nor Stores.
    pub fn work_ops(&self) -> usize {
        self.ops
            .values()
            .filter(|o| !matches!(o.kind(), OpKind::Load | OpKind::Store))
            .count()
    }

    /// Check structural invariants: acyclic, arity per kind, total and
    /// distinct input slots, and column references resolving in inputs.
    pub fn validate(&self) -> Result<(), PlanError> {
        self.topo_order()?;
        for op in self.ops.values() {
            let mut slots: Vec<usize> = self.edges.iter().filter(|e| e.to == op.id).map(|e| e.slot).collect();
            slots.sort_unstable();
            if slots.iter().enumerate().any(|(i, &s)| i != s) {
                return Err(PlanError::Slots(op.id));
            }
            let n_in = slots.len();
            let n_out = self.edges.iter().filter(|e| e.from == op.id).count();
            let ok = match op.kind() {
                OpKind::Load => n_in == 0 && n_out >= 1,
                OpKind::Store => n_in == 1 && n_out == 0,
                OpKind::Split => n_in == 1 && n_out >= 2,
                OpKind::Join | OpKind::CoGroup | OpKind::Union => n_in >= 2 && n_out >= 1,
                _ => n_in == 1 && n_out >= 1,
            };
            if !ok {
                return Err(PlanError::Arity(op.id));
            }
            for slot in 0..n_in {
                let schema = self.input_schema(op.id, slot).unwrap();
                for col in op.params.referenced_columns(slot) {
                    if schema.resolve(&col).is_err() {
                        return Err(PlanError::Column { op: op.id, column: col });
                    }
                }
            }
        }
        Ok(())
    }
}
