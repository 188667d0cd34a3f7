//! Chooses operators whose outputs to materialize, injects Split + Store
//! pairs for them, and derives the standalone plans registered for reuse.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exec::JobStatistics;
use crate::plan::{JobId, MapReduceJob, OpId, OpKind, OpParams, PhysicalPlan, WorkflowId};
use crate::repository::EntryStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heuristic {
    /// Operators that shrink their input.
    Conservative,
    /// Shrinking operators plus expensive ones.
    Aggressive,
    /// Every operator except Load, Store, Split and Aggregate.
    NoHeuristic,
}

impl Heuristic {
    pub const ALL: [Heuristic; 3] = [Heuristic::Conservative, Heuristic::Aggressive, Heuristic::NoHeuristic];

    pub fn eligible(self, kind: OpKind) -> bool {
        match self {
            Heuristic::Conservative => matches!(kind, OpKind::Project | OpKind::Filter),
            Heuristic::Aggressive => matches!(
                kind,
                OpKind::Project | OpKind::Filter | OpKind::Join | OpKind::Group | OpKind::CoGroup
            ),
            Heuristic::NoHeuristic => !matches!(
                kind,
                OpKind::Load | OpKind::Store | OpKind::Split | OpKind::Aggregate
            ),
        }
    }

    pub fn eligible_kinds(self) -> Vec<OpKind> {
        OpKind::ALL.into_iter().filter(|&k| self.eligible(k)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Heuristic::Conservative => "conservative",
            Heuristic::Aggressive => "aggressive",
            Heuristic::NoHeuristic => "all",
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown heuristic '{0}' (expected conservative, aggressive or all)")]
pub struct UnknownHeuristic(pub String);

impl FromStr for Heuristic {
    type Err = UnknownHeuristic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "conservative" | "hc" => Ok(Heuristic::Conservative),
            "aggressive" | "ha" => Ok(Heuristic::Aggressive),
            "all" | "nh" | "noheuristic" => Ok(Heuristic::NoHeuristic),
            _ => Err(UnknownHeuristic(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPoint {
    pub job_id: JobId,
    pub op_id: OpId,
    pub store_path: String,
    /// The operator already feeds a Store, so no extra Store is injected.
    pub feeds_store: bool,
}

pub fn store_path(wf: &WorkflowId, job: &JobId, op: OpId) -> String {
    format!("restore/{}/{}/{}", wf.0, job.0, op.0)
}

/// Eligible operators of `job` in topological order.
pub fn enumerate_candidates(wf: &WorkflowId, job: &MapReduceJob, h: Heuristic) -> Vec<InjectionPoint> {
    let order = job
        .plan
        .topo_order()
        .unwrap_or_else(|_| job.plan.ops.keys().copied().collect());
    order
        .into_iter()
        .filter(|&id| h.eligible(job.plan.op(id).kind()))
        .map(|id| InjectionPoint {
            job_id: job.id.clone(),
            op_id: id,
            store_path: store_path(wf, &job.id, id),
            feeds_store: job
                .plan
                .successors(id)
                .iter()
                .any(|&s| job.plan.op(s).kind() == OpKind::Store),
        })
        .collect()
}

/// Tee each point's output into a new Store. Points already feeding a
/// Store are left alone.
pub fn inject_stores(job: &MapReduceJob, points: &[InjectionPoint]) -> MapReduceJob {
    let mut out = job.clone();
    let plan = &mut out.plan;
    for p in points.iter().filter(|p| !p.feeds_store && p.job_id == job.id) {
        let schema = plan.op(p.op_id).schema.clone();
        let consumers = plan.consumers(p.op_id);
        let split = plan.add(OpParams::Split, schema.clone());
        plan.edges.retain(|e| e.from != p.op_id);
        plan.connect(p.op_id, split, 0);
        for (c, slot) in consumers {
            plan.connect(split, c, slot);
        }
        let store = plan.add(OpParams::Store { path: p.store_path.clone() }, schema);
        plan.connect(split, store, 0);
    }
    out
}

/// Replace every Split by direct edges from its input to its consumers.
pub fn contract_splits(plan: &mut PhysicalPlan) {
    for s in plan.ids_of(OpKind::Split) {
        let Some(&input) = plan.inputs(s).first() else {
            plan.remove(s);
            continue;
        };
        let consumers = plan.consumers(s);
        plan.remove(s);
        for (c, slot) in consumers {
            plan.connect(input, c, slot);
        }
    }
}

/// The operators from the Loads up to and including `op`, with Splits
/// removed, terminated by a Store into `store_path`.
pub fn extract_subjob_plan(plan: &PhysicalPlan, op: OpId, store_path: &str) -> PhysicalPlan {
    let mut keep = plan.ancestors(op);
    keep.insert(op);
    let mut sub = plan.restricted(&keep);
    contract_splits(&mut sub);
    // `op` itself may be a Split in degenerate inputs; anchor on its source.
    let mut anchor = op;
    while !sub.ops.contains_key(&anchor) {
        match plan.inputs(anchor).first() {
            Some(&i) => anchor = i,
            None => break,
        }
    }
    let schema = sub.op(anchor).schema.clone();
    let store = sub.add(OpParams::Store { path: store_path.to_string() }, schema);
    sub.connect(anchor, store, 0);
    sub
}

/// Statistics of a fragment of a finished job: the operators in `closure`
/// and the Store `store`. The sort phase counts only when the fragment
/// contains the shuffle.
pub fn fragment_stats(job: &MapReduceJob, stats: &JobStatistics, closure: &BTreeSet<OpId>, store: OpId) -> EntryStats {
    let loads: Vec<OpId> = closure
        .iter()
        .copied()
        .filter(|&id| job.plan.op(id).kind() == OpKind::Load)
        .collect();
    let with_shuffle = closure.iter().any(|&id| job.plan.op(id).kind().is_shuffle());
    let t_ops = stats
        .t_ops
        .iter()
        .filter(|(id, _)| closure.contains(id) && job.plan.ops.get(id).is_some_and(|o| o.kind() != OpKind::Split))
        .map(|(id, t)| (*id, *t))
        .collect();
    let mut s = EntryStats {
        input_bytes: loads.iter().filter_map(|id| stats.load_bytes.get(id)).sum(),
        output_bytes: stats.store_bytes.get(&store).copied().unwrap_or_default(),
        t_load: loads.iter().filter_map(|id| stats.load_times.get(id)).sum(),
        t_ops,
        t_sort: if with_shuffle { stats.t_sort } else { Default::default() },
        t_store: stats.store_times.get(&store).copied().unwrap_or_default(),
        t_elapsed: Default::default(),
    };
    s.t_elapsed = s.t_load + s.t_ops.values().sum::<std::time::Duration>() + s.t_sort + s.t_store;
    s
}

/// Injection points of one workflow, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub workflow: WorkflowId,
    pub heuristic: Heuristic,
    pub points: Vec<InjectionPoint>,
}
