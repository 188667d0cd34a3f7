//! Containment matching of stored plans inside job plans, and rewriting of
//! jobs and workflows to read stored outputs.

mod rewrite;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::plan::{OpId, OpKind, OpParams, PhysicalOp, PhysicalPlan};

pub use rewrite::{
    apply_match, match_job, rewrite_workflow, splice_compatible, JobRewrite, MatchUsed, RewriteContext, RewriteReport, SpliceError,
};

/// Operator-local equivalence: same kind and canonical parameters, with
/// `inputs_equivalent` telling whether each input slot is fed equivalently.
/// Loads compare their dataset path and schema.
pub fn operators_equivalent(a: &PhysicalOp, b: &PhysicalOp, inputs_equivalent: &[bool]) -> bool {
    if a.kind() != b.kind() || a.params != b.params {
        return false;
    }
    if let OpParams::Load { .. } = a.params {
        return a.schema == b.schema;
    }
    inputs_equivalent.iter().all(|&e| e)
}

/// A containment of a stored plan (`repo`) in an input plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Match {
    /// Repo operator → input operator, for every non-Store repo operator.
    pub mapping: BTreeMap<OpId, OpId>,
    /// Images of the repo plan's final operators (those feeding only Stores).
    pub frontiers: Vec<OpId>,
    /// Whether the mapping covers every non-Store operator of the input plan.
    pub whole_job: bool,
}

impl Match {
    /// The single frontier operator, if the repo plan has one output.
    pub fn frontier(&self) -> Option<OpId> {
        match self.frontiers[..] {
            [f] => Some(f),
            _ => None,
        }
    }
}

struct Traversal<'a> {
    input: &'a PhysicalPlan,
    repo: &'a PhysicalPlan,
    memo: HashMap<(OpId, OpId), bool>,
    seen: HashSet<OpId>,
    /// repo → input
    mapping: BTreeMap<OpId, OpId>,
    /// input → repo
    inverse: HashMap<OpId, OpId>,
}

impl Traversal<'_> {
    fn equivalent(&mut self, a: OpId, b: OpId) -> bool {
        if let Some(&r) = self.memo.get(&(a, b)) {
            return r;
        }
        let (oa, ob) = (self.input.op(a), self.repo.op(b));
        let ia = self.input.inputs(a);
        let ib = self.repo.inputs(b);
        let r = if ia.len() != ib.len() || oa.kind() != ob.kind() || oa.params != ob.params {
            false
        } else {
            let slots: Vec<bool> = ia.iter().zip(&ib).map(|(&x, &y)| self.equivalent(x, y)).collect();
            operators_equivalent(oa, ob, &slots)
        };
        self.memo.insert((a, b), r);
        r
    }

    fn find_equivalent(&mut self, succ: OpId, succs2: &[OpId]) -> Option<OpId> {
        if let Some(&r) = self.inverse.get(&succ) {
            return succs2.contains(&r).then_some(r);
        }
        succs2
            .iter()
            .copied()
            .find(|&c| !self.mapping.contains_key(&c) && self.equivalent(succ, c))
    }

    fn repo_successors(&self, id: OpId) -> Vec<OpId> {
        self.repo
            .successors(id)
            .into_iter()
            .filter(|&s| self.repo.op(s).kind() != OpKind::Store)
            .collect()
    }

    /// Depth-first simultaneous traversal. Returns the deepest matched input
    /// operator of the branch, or `None` when the branch fails.
    fn traverse(&mut self, succs1: &[OpId], mut succs2: Vec<OpId>, last_match: Option<OpId>) -> Option<OpId> {
        if succs2.is_empty() {
            return last_match;
        } else if succs1.is_empty() {
            return None;
        }
        let mut ret = last_match;
        for &succ in succs1 {
            if !self.seen.insert(succ) {
                continue;
            }
            let Some(equiv) = self.find_equivalent(succ, &succs2) else {
                continue;
            };
            self.mapping.insert(equiv, succ);
            self.inverse.insert(succ, equiv);
            let next1 = self.input.successors(succ);
            let next2 = self.repo_successors(equiv);
            ret = self.traverse(&next1, next2, Some(succ));
            if ret.is_none() {
                return None;
            }
            succs2.retain(|&x| x != equiv);
            if succs2.is_empty() {
                break;
            }
        }
        ret
    }
}

/// Test whether `repo` (ignoring its Stores) is contained in `input`.
pub fn pairwise_plan_traversal(input: &PhysicalPlan, repo: &PhysicalPlan) -> Option<Match> {
    let mut t = Traversal {
        input,
        repo,
        memo: HashMap::new(),
        seen: HashSet::new(),
        mapping: BTreeMap::new(),
        inverse: HashMap::new(),
    };
    t.traverse(&input.loads(), repo.loads(), None)?;

    let repo_ops: BTreeSet<OpId> = repo
        .ops
        .values()
        .filter(|o| o.kind() != OpKind::Store)
        .map(|o| o.id)
        .collect();
    if repo_ops.is_empty() || t.mapping.keys().copied().collect::<BTreeSet<_>>() != repo_ops {
        return None;
    }
    for e in &repo.edges {
        if repo.op(e.to).kind() == OpKind::Store {
            continue;
        }
        let edge = crate::plan::Edge {
            from: t.mapping[&e.from],
            to: t.mapping[&e.to],
            slot: e.slot,
        };
        if !input.edges.contains(&edge) {
            return None;
        }
    }
    let frontiers: Vec<OpId> = repo_ops
        .iter()
        .filter(|&&r| repo.successors(r).iter().all(|&s| repo.op(s).kind() == OpKind::Store))
        .map(|r| t.mapping[r])
        .collect();
    let image: BTreeSet<OpId> = t.mapping.values().copied().collect();
    let input_ops: BTreeSet<OpId> = input
        .ops
        .values()
        .filter(|o| o.kind() != OpKind::Store)
        .map(|o| o.id)
        .collect();
    Some(Match {
        whole_job: image == input_ops,
        mapping: t.mapping,
        frontiers,
    })
}

/// `a` subsumes `b` when `b`'s operators all have equivalents in `a`.
pub fn subsumes(a: &PhysicalPlan, b: &PhysicalPlan) -> bool {
    pairwise_plan_traversal(a, b).is_some()
}
