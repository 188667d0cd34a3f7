//! Division of a physical plan into MapReduce jobs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{OpId, OpKind, OpParams, PhysicalPlan, PlanError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobId(pub String);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorkflowId(pub String);

impl fmt::Display for WorkflowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl WorkflowId {
    /// Directory under which this workflow's intermediate outputs live.
    pub fn tmp_prefix(&self) -> String {
        format!("tmp/{}/", self.0)
    }
}

/// One MapReduce job: a physical plan with at most one shuffle operator.
/// Operators upstream of the shuffle (or all of them, for a map-only job)
/// run in the map phase; the shuffle operator and everything downstream of
/// it run in the reduce phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapReduceJob {
    pub id: JobId,
    pub plan: PhysicalPlan,
    /// The job's primary output.
    pub output_path: String,
}

impl MapReduceJob {
    pub fn shuffle_op(&self) -> Option<OpId> {
        self.plan.ops.values().find(|o| o.kind().is_shuffle()).map(|o| o.id)
    }

    pub fn reduce_ops(&self) -> BTreeSet<OpId> {
        self.shuffle_op()
            .map(|s| self.plan.descendants(s))
            .unwrap_or_default()
    }

    pub fn map_ops(&self) -> BTreeSet<OpId> {
        let reduce = self.reduce_ops();
        self.plan.ops.keys().filter(|k| !reduce.contains(k)).copied().collect()
    }

    pub fn map_plan(&self) -> PhysicalPlan {
        self.plan.restricted(&self.map_ops())
    }

    pub fn reduce_plan(&self) -> Option<PhysicalPlan> {
        self.shuffle_op().map(|_| self.plan.restricted(&self.reduce_ops()))
    }

    /// Key columns per shuffle input slot.
    pub fn shuffle_keys(&self) -> Option<Vec<Vec<String>>> {
        let s = self.shuffle_op()?;
        let op = self.plan.op(s);
        Some(match &op.params {
            OpParams::Join { keys } | OpParams::CoGroup { keys } => keys.clone(),
            OpParams::Group { keys } => vec![keys.clone()],
            OpParams::Distinct => vec![self
                .plan
                .input_schema(s, 0)
                .map(|sc| sc.names().map(str::to_string).collect())
                .unwrap_or_default()],
            _ => unreachable!("shuffle operator kind"),
        })
    }

    pub fn input_paths(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .plan
            .loads()
            .into_iter()
            .filter_map(|l| self.plan.op(l).path().map(str::to_string))
            .collect();
        set.into_iter().collect()
    }

    pub fn output_paths(&self) -> Vec<String> {
        self.plan
            .stores()
            .into_iter()
            .filter_map(|s| self.plan.op(s).path().map(str::to_string))
            .collect()
    }
}

/// A DAG of jobs connected through the datasets they write and read.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workflow {
    pub id: WorkflowId,
    pub jobs: Vec<MapReduceJob>,
    /// Producer → consumer pairs.
    pub deps: Vec<(JobId, JobId)>,
}

impl Workflow {
    pub fn new(id: WorkflowId, jobs: Vec<MapReduceJob>) -> Self {
        let mut wf = Workflow { id, jobs, deps: Vec::new() };
        wf.recompute_deps();
        wf
    }

    pub fn job(&self, id: &JobId) -> Option<&MapReduceJob> {
        self.jobs.iter().find(|j| &j.id == id)
    }

    /// Derive dependency edges from Store/Load path equality.
    pub fn recompute_deps(&mut self) {
        let mut deps = Vec::new();
        for p in &self.jobs {
            let outs: BTreeSet<String> = p.output_paths().into_iter().collect();
            for c in &self.jobs {
                if c.id != p.id && c.input_paths().iter().any(|i| outs.contains(i)) {
                    deps.push((p.id.clone(), c.id.clone()));
                }
            }
        }
        self.deps = deps;
    }

    /// Jobs `id` depends on.
    pub fn deps_of(&self, id: &JobId) -> Vec<JobId> {
        self.deps.iter().filter(|(_, c)| c == id).map(|(p, _)| p.clone()).collect()
    }

    pub fn is_tmp_path(&self, path: &str) -> bool {
        path.starts_with(&self.id.tmp_prefix())
    }

    /// Total number of operators across jobs, excluding Loads and Stores.
    pub fn work_ops(&self) -> usize {
        self.jobs.iter().map(|j| j.plan.work_ops()).sum()
    }
}

/// Jobs in dependency layers; jobs within one layer are independent.
pub fn execution_order(wf: &Workflow) -> Result<Vec<Vec<JobId>>, PlanError> {
    let mut remaining: Vec<&JobId> = wf.jobs.iter().map(|j| &j.id).collect();
    let mut done: BTreeSet<&JobId> = BTreeSet::new();
    let mut batches = Vec::new();
    while !remaining.is_empty() {
        let ready: Vec<&JobId> = remaining
            .iter()
            .copied()
            .filter(|j| wf.deps.iter().all(|(p, c)| c != *j || done.contains(p)))
            .collect();
        if ready.is_empty() {
            return Err(PlanError::Cycle);
        }
        remaining.retain(|j| !ready.contains(j));
        done.extend(ready.iter().copied());
        batches.push(ready.into_iter().cloned().collect());
    }
    Ok(batches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Map,
    Reduce(OpId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Group {
    Shuffle(OpId),
    /// A map-only job reading intermediate outputs, keyed by a member op.
    Tail(OpId),
    /// The map-only job collecting independent map-only pipelines.
    Free,
}

fn find(parent: &mut HashMap<OpId, OpId>, x: OpId) -> OpId {
    let p = parent[&x];
    if p == x {
        return x;
    }
    let r = find(parent, p);
    parent.insert(x, r);
    r
}

/// Divide a physical plan into jobs. Each shuffle operator starts the reduce
/// phase of its own job and pipelinable operators are fused into the nearest
/// job. Data crossing job boundaries is written to `tmp/<workflow>/<job>`
/// by an added Store and read back by an added Load. Operator ids of `pp`
/// are preserved; added operators get fresh ids.
pub fn split_into_jobs(pp: &PhysicalPlan, wf_id: &WorkflowId) -> Workflow {
    let order = pp.topo_order().expect("split_into_jobs requires an acyclic plan");
    let topo_idx: HashMap<OpId, usize> = order.iter().enumerate().map(|(i, &o)| (o, i)).collect();

    let mut stage: HashMap<OpId, Stage> = HashMap::new();
    for &id in &order {
        let kind = pp.op(id).kind();
        let s = if kind.is_shuffle() {
            Stage::Reduce(id)
        } else if kind == OpKind::Load {
            Stage::Map
        } else {
            let ins: Vec<Stage> = pp.inputs(id).iter().map(|i| stage[i]).collect();
            match ins.first() {
                Some(&Stage::Reduce(r)) if ins.iter().all(|&s| s == Stage::Reduce(r)) => Stage::Reduce(r),
                _ => Stage::Map,
            }
        };
        stage.insert(id, s);
    }

    // A map-stage operator downstream of a reduce cannot share a job with
    // the operators that feed that reduce.
    let mut after_reduce: HashSet<OpId> = HashSet::new();
    for &id in &order {
        if stage[&id] == Stage::Map
            && pp
                .inputs(id)
                .iter()
                .any(|i| matches!(stage[i], Stage::Reduce(_)) || after_reduce.contains(i))
        {
            after_reduce.insert(id);
        }
    }

    // Connected components of map-stage operators.
    let map_ops: Vec<OpId> = order.iter().copied().filter(|o| stage[o] == Stage::Map).collect();
    let mut parent: HashMap<OpId, OpId> = map_ops.iter().map(|&o| (o, o)).collect();
    for e in &pp.edges {
        if stage[&e.from] == Stage::Map
            && stage[&e.to] == Stage::Map
            && after_reduce.contains(&e.from) == after_reduce.contains(&e.to)
        {
            let (a, b) = (find(&mut parent, e.from), find(&mut parent, e.to));
            if a != b {
                parent.insert(a, b);
            }
        }
    }
    let mut components: BTreeMap<OpId, Vec<OpId>> = BTreeMap::new();
    for &o in &map_ops {
        let r = find(&mut parent, o);
        components.entry(r).or_default().push(o);
    }

    let is_reduce_cut = |from: OpId, to: OpId| match stage[&from] {
        Stage::Reduce(r) => stage[&to] != Stage::Reduce(r),
        Stage::Map => stage[&to] == Stage::Map && !after_reduce.contains(&from) && after_reduce.contains(&to),
    };
    let first_shuffle = order.iter().copied().find(|o| pp.op(*o).kind().is_shuffle());

    let mut group_of: HashMap<OpId, Group> = HashMap::new();
    let mut cuts: BTreeSet<super::Edge> = BTreeSet::new();
    for e in &pp.edges {
        if is_reduce_cut(e.from, e.to) {
            cuts.insert(*e);
        }
    }
    for (_, members) in &components {
        let member_set: BTreeSet<OpId> = members.iter().copied().collect();
        let mut targets: Vec<OpId> = pp
            .edges
            .iter()
            .filter(|e| member_set.contains(&e.from) && pp.op(e.to).kind().is_shuffle())
            .map(|e| e.to)
            .collect();
        targets.sort_by_key(|t| topo_idx[t]);
        targets.dedup();
        let fed_by_cut = pp.edges.iter().any(|e| member_set.contains(&e.to) && cuts.contains(e));
        let group = match targets.first() {
            Some(&r1) => {
                for e in &pp.edges {
                    if member_set.contains(&e.from) && pp.op(e.to).kind().is_shuffle() && e.to != r1 {
                        cuts.insert(*e);
                    }
                }
                Group::Shuffle(r1)
            }
            None if fed_by_cut => Group::Tail(members[0]),
            None => first_shuffle.map_or(Group::Free, Group::Shuffle),
        };
        for &m in members {
            group_of.insert(m, group);
        }
    }
    for &id in &order {
        if let Stage::Reduce(r) = stage[&id] {
            group_of.insert(id, Group::Shuffle(r));
        }
    }

    // Order groups topologically over the cut edges.
    let mut groups: BTreeSet<Group> = group_of.values().copied().collect();
    let group_rank = |g: &Group, group_of: &HashMap<OpId, Group>| {
        group_of
            .iter()
            .filter(|(_, x)| *x == g)
            .map(|(o, _)| topo_idx[o])
            .min()
            .unwrap_or(usize::MAX)
    };
    let group_deps: BTreeSet<(Group, Group)> = cuts
        .iter()
        .map(|e| (group_of[&e.from], group_of[&e.to]))
        .filter(|(a, b)| a != b)
        .collect();
    let mut ordered: Vec<Group> = Vec::new();
    while !groups.is_empty() {
        let ready = groups
            .iter()
            .copied()
            .filter(|g| !group_deps.iter().any(|(a, b)| b == g && groups.contains(a)))
            .min_by_key(|g| group_rank(g, &group_of))
            .expect("job dependencies are acyclic");
        groups.remove(&ready);
        ordered.push(ready);
    }
    let job_ids: HashMap<Group, JobId> = ordered
        .iter()
        .enumerate()
        .map(|(i, g)| (*g, JobId(format!("j{}", i + 1))))
        .collect();

    let mut plans: HashMap<Group, PhysicalPlan> = HashMap::new();
    for (&op, g) in &group_of {
        plans.entry(*g).or_default().ops.insert(op, pp.op(op).clone());
    }
    for e in &pp.edges {
        if !cuts.contains(e) {
            plans.get_mut(&group_of[&e.from]).unwrap().edges.insert(*e);
        }
    }

    let mut next = pp.next_id().0;
    let mut fresh = || {
        let id = OpId(next);
        next += 1;
        id
    };
    let producers: BTreeSet<OpId> = cuts.iter().map(|e| e.from).collect();
    let mut tmp_path: HashMap<OpId, String> = HashMap::new();
    let mut per_job: HashMap<Group, usize> = HashMap::new();
    for &p in &producers {
        let g = group_of[&p];
        let n = per_job.entry(g).or_insert(0);
        *n += 1;
        let base = format!("{}{}", wf_id.tmp_prefix(), job_ids[&g]);
        let path = if *n == 1 { base } else { format!("{base}-{n}") };
        let store = fresh();
        let plan = plans.get_mut(&g).unwrap();
        plan.insert(store, OpParams::Store { path: path.clone() }, pp.op(p).schema.clone());
        plan.connect(p, store, 0);
        tmp_path.insert(p, path);
    }
    let mut tmp_loads: HashMap<(OpId, Group), OpId> = HashMap::new();
    for e in &cuts {
        let g = group_of[&e.to];
        let load = *tmp_loads.entry((e.from, g)).or_insert_with(|| {
            let id = fresh();
            plans.get_mut(&g).unwrap().insert(
                id,
                OpParams::Load { path: tmp_path[&e.from].clone() },
                pp.op(e.from).schema.clone(),
            );
            id
        });
        plans.get_mut(&g).unwrap().connect(load, e.to, e.slot);
    }

    let jobs = ordered
        .iter()
        .map(|g| {
            let plan = plans.remove(g).unwrap();
            let output_path = primary_output(&plan, wf_id);
            MapReduceJob {
                id: job_ids[g].clone(),
                plan,
                output_path,
            }
        })
        .collect();
    Workflow::new(wf_id.clone(), jobs)
}

/// The Store a job exists to produce: reduce-side before map-side, user
/// sinks before intermediate outputs, lowest id first.
fn primary_output(plan: &PhysicalPlan, wf_id: &WorkflowId) -> String {
    let reduce: BTreeSet<OpId> = plan
        .ops
        .values()
        .find(|o| o.kind().is_shuffle())
        .map(|o| plan.descendants(o.id))
        .unwrap_or_default();
    let tmp = wf_id.tmp_prefix();
    plan.stores()
        .into_iter()
        .map(|s| {
            let path = plan.op(s).path().unwrap().to_string();
            let rank = (!reduce.contains(&s) && !reduce.is_empty(), path.starts_with(&tmp), s);
            (rank, path)
        })
        .min()
        .map(|(_, p)| p)
        .unwrap_or_default()
}

/// Merge job plans back into one plan, joining each intermediate Store to
/// the Loads that read it.
pub fn contract(wf: &Workflow) -> PhysicalPlan {
    let mut all = PhysicalPlan::default();
    for j in &wf.jobs {
        all.ops.extend(j.plan.ops.iter().map(|(k, v)| (*k, v.clone())));
        all.edges.extend(j.plan.edges.iter().copied());
    }
    let tmp_stores: Vec<(OpId, String)> = all
        .stores()
        .into_iter()
        .filter_map(|s| all.op(s).path().filter(|p| wf.is_tmp_path(p)).map(|p| (s, p.to_string())))
        .collect();
    for (store, path) in tmp_stores {
        let producer = all.inputs(store)[0];
        let loads: Vec<OpId> = all
            .loads()
            .into_iter()
            .filter(|l| all.op(*l).path() == Some(path.as_str()))
            .collect();
        for l in loads {
            for (to, slot) in all.consumers(l) {
                all.connect(producer, to, slot);
            }
            all.remove(l);
        }
        all.remove(store);
    }
    all
}
