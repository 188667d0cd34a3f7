use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use super::{pairwise_plan_traversal, Match};
use crate::plan::{execution_order, JobId, MapReduceJob, OpId, OpKind, OpParams, PhysicalPlan, Workflow};
use crate::repository::{EntryId, RepositoryEntry};
use crate::schema::Schema;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpliceError {
    #[error("stored plan has no single output operator")]
    NoFrontier,
    #[error("match ends at a Load and would not remove any work")]
    NoProgress,
    #[error("stored schema {stored} is incompatible with {expected}")]
    Schema { stored: String, expected: String },
    #[error("rewritten plan is invalid: {0}")]
    Invalid(#[from] crate::plan::PlanError),
}

/// Inputs to a rewrite besides the workflow itself.
pub struct RewriteContext<'a> {
    /// Entries in scan order.
    pub entries: &'a [RepositoryEntry],
    /// Filters out entries whose output can no longer be read as recorded.
    pub usable: &'a dyn Fn(&RepositoryEntry) -> bool,
    /// Datasets the workflow writes; entries stored there are never used.
    pub forbidden_outputs: BTreeSet<String>,
    /// Estimated read cost, for the time-saved figures of the report.
    pub read_nanos_per_byte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchUsed {
    pub job_id: JobId,
    pub entry_id: EntryId,
    pub frontier: OpId,
    pub whole_job: bool,
    pub ops_eliminated: usize,
    pub est_saved: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRewrite {
    pub job: MapReduceJob,
    pub matches: Vec<MatchUsed>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RewriteReport {
    pub matches: Vec<MatchUsed>,
    pub elided_jobs: Vec<JobId>,
    /// (job, old path, new path) for every redirected Load.
    pub redirected: Vec<(JobId, String, String)>,
    pub ops_before: usize,
    pub ops_after: usize,
    pub est_saved: Duration,
}

impl RewriteReport {
    pub fn entries_used(&self) -> BTreeSet<EntryId> {
        self.matches.iter().map(|m| m.entry_id.clone()).collect()
    }
}

/// Whether readers of a dataset with schema `old` can read `new` instead:
/// same shape, and every referenced column resolves to the same position.
pub fn splice_compatible(old: &Schema, new: &Schema, readers: &[(&OpParams, usize)]) -> bool {
    if old.len() != new.len() || old.columns.iter().zip(&new.columns).any(|(a, b)| a.kind != b.kind) {
        return false;
    }
    readers.iter().all(|(params, slot)| {
        params
            .referenced_columns(*slot)
            .iter()
            .all(|c| matches!((old.resolve(c), new.resolve(c)), (Ok(a), Ok(b)) if a == b))
    })
}

fn stored_schema(entry: &RepositoryEntry) -> Option<&Schema> {
    entry
        .plan
        .ops
        .values()
        .find(|o| o.kind() == OpKind::Store)
        .map(|o| &o.schema)
}

/// Replace the fragment matched by `m` with a Load of the entry's output.
pub fn apply_match(plan: &PhysicalPlan, m: &Match, entry: &RepositoryEntry) -> Result<PhysicalPlan, SpliceError> {
    let frontier = m.frontier().ok_or(SpliceError::NoFrontier)?;
    if plan.op(frontier).kind() == OpKind::Load {
        return Err(SpliceError::NoProgress);
    }
    let stored = stored_schema(entry).ok_or(SpliceError::NoFrontier)?.clone();
    let consumers = plan.consumers(frontier);
    let readers: Vec<(&OpParams, usize)> = consumers.iter().map(|&(c, s)| (&plan.op(c).params, s)).collect();
    let old = &plan.op(frontier).schema;
    if !splice_compatible(old, &stored, &readers) {
        return Err(SpliceError::Schema {
            stored: stored.to_string(),
            expected: old.to_string(),
        });
    }
    let mut out = plan.clone();
    let load = out.add(
        OpParams::Load {
            path: entry.output_path.clone(),
        },
        stored,
    );
    out.edges.retain(|e| e.from != frontier);
    for (c, slot) in consumers {
        out.connect(load, c, slot);
    }
    out.prune_dead();
    out.validate()?;
    Ok(out)
}

/// Rewrite one job against the repository, rescanning after every match
/// until a full scan finds nothing more.
pub fn match_job(job: &MapReduceJob, ctx: &RewriteContext<'_>) -> JobRewrite {
    let mut job = job.clone();
    let mut matches = Vec::new();
    'scan: loop {
        for entry in ctx.entries {
            if ctx.forbidden_outputs.contains(&entry.output_path) || !(ctx.usable)(entry) {
                continue;
            }
            let Some(m) = pairwise_plan_traversal(&job.plan, &entry.plan) else {
                continue;
            };
            let Ok(plan) = apply_match(&job.plan, &m, entry) else {
                continue;
            };
            let before = job.plan.work_ops();
            let after = plan.work_ops();
            debug_assert!(after < before, "a match must remove work");
            let read = Duration::from_secs_f64(entry.stats.output_bytes as f64 * ctx.read_nanos_per_byte / 1e9);
            let et = entry.stats.t_load + entry.stats.t_ops.values().sum::<Duration>() + entry.stats.t_sort + entry.stats.t_store;
            matches.push(MatchUsed {
                job_id: job.id.clone(),
                entry_id: entry.id.clone(),
                frontier: m.frontier().unwrap_or(OpId(0)),
                whole_job: m.whole_job,
                ops_eliminated: before - after,
                est_saved: et.saturating_sub(read),
            });
            job.plan = plan;
            continue 'scan;
        }
        break;
    }
    JobRewrite { job, matches }
}

/// A job that only copies datasets into intermediate outputs.
fn copy_only(job: &MapReduceJob, wf: &Workflow) -> Option<Vec<(String, OpId)>> {
    let plan = &job.plan;
    if plan.work_ops() > 0 {
        return None;
    }
    let mut out = Vec::new();
    for s in plan.stores() {
        let path = plan.op(s).path()?;
        if !wf.is_tmp_path(path) {
            return None;
        }
        let src = *plan.inputs(s).first()?;
        out.push((path.to_string(), src));
    }
    Some(out)
}

/// Rewrite every job in dependency order. Jobs reduced to copying a stored
/// output into an intermediate dataset are removed, and their consumers
/// read the stored output directly.
pub fn rewrite_workflow(wf: &Workflow, ctx: &RewriteContext<'_>) -> (Workflow, RewriteReport) {
    let mut report = RewriteReport {
        ops_before: wf.work_ops(),
        ..Default::default()
    };
    let order: Vec<JobId> = match execution_order(wf) {
        Ok(b) => b.into_iter().flatten().collect(),
        Err(_) => return (wf.clone(), report),
    };
    let mut jobs: BTreeMap<JobId, MapReduceJob> = wf.jobs.iter().map(|j| (j.id.clone(), j.clone())).collect();
    for id in &order {
        let Some(job) = jobs.get(id) else { continue };
        let JobRewrite { job, matches } = match_job(job, ctx);
        let used = !matches.is_empty();
        report.matches.extend(matches);
        jobs.insert(id.clone(), job);
        if !used {
            continue;
        }
        let job = &jobs[id];
        let Some(copies) = copy_only(job, wf) else { continue };
        // Redirect every consumer of the copies, if all of them can read the
        // source dataset unchanged.
        let mut edits: Vec<(JobId, OpId, String, Schema)> = Vec::new();
        let mut ok = true;
        for (tmp, src) in &copies {
            let src_op = job.plan.op(*src);
            let src_path = src_op.path().unwrap_or_default().to_string();
            for (cid, consumer) in jobs.iter().filter(|(cid, _)| *cid != id) {
                for l in consumer.plan.loads() {
                    let lop = consumer.plan.op(l);
                    if lop.path() != Some(tmp.as_str()) {
                        continue;
                    }
                    let readers: Vec<(&OpParams, usize)> = consumer
                        .plan
                        .consumers(l)
                        .into_iter()
                        .map(|(c, s)| (&consumer.plan.op(c).params, s))
                        .collect();
                    if !splice_compatible(&lop.schema, &src_op.schema, &readers) {
                        ok = false;
                    }
                    edits.push((cid.clone(), l, src_path.clone(), src_op.schema.clone()));
                }
            }
        }
        if !ok {
            continue;
        }
        for (cid, l, path, schema) in edits {
            let consumer = jobs.get_mut(&cid).unwrap();
            let op = consumer.plan.ops.get_mut(&l).unwrap();
            let old = op.path().unwrap_or_default().to_string();
            op.params = OpParams::Load { path: path.clone() };
            op.schema = schema;
            report.redirected.push((cid, old, path));
        }
        jobs.remove(id);
        report.elided_jobs.push(id.clone());
    }
    let kept: Vec<MapReduceJob> = wf.jobs.iter().filter_map(|j| jobs.remove(&j.id)).collect();
    let out = Workflow::new(wf.id.clone(), kept);
    report.ops_after = out.work_ops();
    report.est_saved = report.matches.iter().map(|m| m.est_saved).sum();
    (out, report)
}
