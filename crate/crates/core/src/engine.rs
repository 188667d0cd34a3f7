//! The submit pipeline: compile, rewrite against the repository, inject
//! Stores, execute, admit materialized outputs, clean up.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::dfs::{now_nanos, Dfs, DfsError};
use crate::exec::{execute_workflow, ExecConfig, ExecError, WorkflowStatistics};
use crate::lang::{compile, CompileError, LogicalPlan};
use crate::matcher::{rewrite_workflow, RewriteContext, RewriteReport};
use crate::plan::{execution_order, split_into_jobs, to_physical, JobId, OpId, OpKind, PlanError, Workflow, WorkflowId};
use crate::repository::{entry_changed, Admission, Candidate, RepoError, Repository, Rule};
use crate::subjob::{enumerate_candidates, extract_subjob_plan, fragment_stats, inject_stores, Heuristic, InjectionPoint, Manifest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmitConfig {
    pub exec: ExecConfig,
    /// Rewrite jobs to read stored outputs.
    pub reuse: bool,
    /// Which sub-job outputs to materialize; `None` injects nothing.
    pub heuristic: Option<Heuristic>,
    /// Offer job and sub-job outputs to the repository after a successful run.
    pub admit: bool,
    /// Rewrite user outputs as one sorted part.
    pub canonical: bool,
}

impl Default for SubmitConfig {
    fn default() -> Self {
        SubmitConfig {
            exec: ExecConfig::default(),
            reuse: true,
            heuristic: Some(Heuristic::Aggressive),
            admit: true,
            canonical: false,
        }
    }
}

impl SubmitConfig {
    /// Plain execution with every reuse feature off.
    pub fn plain(exec: ExecConfig) -> Self {
        SubmitConfig {
            exec,
            reuse: false,
            heuristic: None,
            admit: false,
            canonical: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AdmissionRecord {
    pub job_id: JobId,
    /// The materialized operator for sub-jobs; `None` for a job output.
    pub op_id: Option<OpId>,
    pub output_path: String,
    /// Size of the materialized output.
    pub bytes: u64,
    pub outcome: Admission,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SubmitReport {
    pub workflow: WorkflowId,
    pub jobs_compiled: usize,
    pub jobs_executed: usize,
    /// Non-Load/Store operators left to execute after rewriting.
    pub executed_ops: usize,
    pub rewrite: RewriteReport,
    pub points: Vec<InjectionPoint>,
    pub injected: usize,
    pub admissions: Vec<AdmissionRecord>,
    pub sinks: Vec<String>,
    pub stats: WorkflowStatistics,
    pub rewrite_time: Duration,
    pub deleted: Vec<String>,
    /// The workflow after rewriting, before Store injection.
    pub executed: Workflow,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("invalid plan: {0}")]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Dfs(#[from] DfsError),
    #[error("output dataset '{0}' already exists (use overwrite to replace it)")]
    OutputExists(String),
    #[error("{source}")]
    Exec {
        #[source]
        source: ExecError,
        report: Box<SubmitReport>,
    },
}

pub fn submit(dfs: &Dfs, repo: &Repository, script: &str, cfg: &SubmitConfig) -> Result<SubmitReport, EngineError> {
    let lp = compile(script)?;
    submit_plan(dfs, repo, &lp, cfg)
}

pub fn submit_plan(dfs: &Dfs, repo: &Repository, lp: &LogicalPlan, cfg: &SubmitConfig) -> Result<SubmitReport, EngineError> {
    let pp = to_physical(lp);
    pp.validate()?;
    let wf_id = repo.next_workflow_id()?;
    let wf = split_into_jobs(&pp, &wf_id);
    let sinks: Vec<String> = pp.stores().into_iter().filter_map(|s| pp.op(s).path().map(str::to_string)).collect();
    if !cfg.exec.overwrite {
        if let Some(s) = sinks.iter().find(|s| dfs.exists(s)) {
            return Err(EngineError::OutputExists(s.clone()));
        }
    }
    let mut report = SubmitReport {
        workflow: wf_id.clone(),
        jobs_compiled: wf.jobs.len(),
        sinks: sinks.clone(),
        ..Default::default()
    };

    let started = Instant::now();
    let wf = if cfg.reuse {
        let state = repo.snapshot()?;
        let usable = |e: &crate::repository::RepositoryEntry| !entry_changed(dfs, e);
        let ctx = RewriteContext {
            entries: &state.entries,
            usable: &usable,
            forbidden_outputs: sinks.iter().cloned().collect(),
            read_nanos_per_byte: state.throughput.nanos_per_byte(),
        };
        let (rewritten, rr) = rewrite_workflow(&wf, &ctx);
        let now = now_nanos();
        for id in rr.entries_used() {
            repo.record_reuse(&id, now)?;
        }
        report.rewrite = rr;
        rewritten
    } else {
        report.rewrite.ops_before = wf.work_ops();
        report.rewrite.ops_after = wf.work_ops();
        wf
    };
    report.rewrite_time = started.elapsed();
    report.jobs_executed = wf.jobs.len();
    report.executed_ops = wf.work_ops();

    let instrumented = match cfg.heuristic {
        Some(h) => {
            let mut jobs = Vec::with_capacity(wf.jobs.len());
            for job in &wf.jobs {
                let pts = enumerate_candidates(&wf_id, job, h);
                jobs.push(inject_stores(job, &pts));
                report.points.extend(pts);
            }
            report.injected = report.points.iter().filter(|p| !p.feeds_store).count();
            write_manifest(
                repo,
                &Manifest {
                    workflow: wf_id.clone(),
                    heuristic: h,
                    points: report.points.clone(),
                },
            )?;
            Workflow::new(wf_id.clone(), jobs)
        }
        None => wf.clone(),
    };
    report.executed = wf.clone();

    let run = execute_workflow(dfs, &instrumented, &cfg.exec);
    report.stats = run.stats;
    if let Some(source) = run.error {
        report.deleted = cleanup(dfs, &wf_id, &BTreeSet::new());
        return Err(EngineError::Exec {
            source,
            report: Box::new(report),
        });
    }

    if cfg.canonical {
        for s in &sinks {
            dfs.canonicalize(s)?;
        }
    }

    let mut retained = BTreeSet::new();
    if cfg.admit {
        record_throughput(repo, &report.stats)?;
        report.admissions = admit_outputs(dfs, repo, &wf, &instrumented, &report.stats, &mut retained)?;
    }
    report.deleted = cleanup(dfs, &wf_id, &retained);
    Ok(report)
}

fn write_manifest(repo: &Repository, m: &Manifest) -> Result<(), RepoError> {
    let dir = repo.root().join("manifests");
    let path = dir.join(format!("{}.json", m.workflow));
    let io = |source| RepoError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    std::fs::write(&path, text).map_err(io)
}

fn record_throughput(repo: &Repository, stats: &WorkflowStatistics) -> Result<(), RepoError> {
    let bytes: u64 = stats.jobs.values().flat_map(|j| j.load_bytes.values()).sum();
    let time: Duration = stats.jobs.values().flat_map(|j| j.load_times.values()).sum();
    if bytes > 0 {
        repo.record_throughput(bytes, time)?;
    }
    Ok(())
}

/// Offer every original job output and every injected sub-job output of
/// the finished workflow to the repository, producers first.
fn admit_outputs(
    dfs: &Dfs,
    repo: &Repository,
    wf: &Workflow,
    instrumented: &Workflow,
    stats: &WorkflowStatistics,
    retained: &mut BTreeSet<String>,
) -> Result<Vec<AdmissionRecord>, EngineError> {
    let mut out = Vec::new();
    let order: Vec<JobId> = execution_order(wf)?.into_iter().flatten().collect();
    let now = now_nanos();
    for id in order {
        let (Some(orig), Some(job), Some(js)) = (wf.job(&id), instrumented.job(&id), stats.jobs.get(&id)) else {
            continue;
        };
        let original_stores: BTreeSet<OpId> = orig.plan.stores().into_iter().collect();
        for store in job.plan.stores() {
            let Some(path) = job.plan.op(store).path().map(str::to_string) else { continue };
            let Some(&producer) = job.plan.inputs(store).first() else { continue };
            // Injected Stores hang off a Split; the materialized operator is
            // the Split's input.
            let op = if job.plan.op(producer).kind() == OpKind::Split {
                job.plan.inputs(producer).first().copied().unwrap_or(producer)
            } else {
                producer
            };
            let plan = extract_subjob_plan(&job.plan, op, &path);
            let mut closure = job.plan.ancestors(op);
            closure.insert(op);
            let entry_stats = fragment_stats(job, js, &closure, store);
            let op_id = (!original_stores.contains(&store)).then_some(op);
            let bytes = entry_stats.output_bytes;
            let record = |outcome| AdmissionRecord {
                job_id: id.clone(),
                op_id,
                output_path: path.clone(),
                bytes,
                outcome,
            };
            // Outputs reading intermediates that are about to disappear
            // could never be validated again.
            let dangling = plan
                .loads()
                .into_iter()
                .filter_map(|l| plan.op(l).path())
                .any(|p| wf.is_tmp_path(p) && !retained.contains(p));
            if dangling {
                out.push(record(Admission::Discarded(Rule::InputChanged)));
                continue;
            }
            if plan.work_ops() == 0 {
                out.push(record(Admission::Discarded(Rule::OutputNotSmaller)));
                continue;
            }
            let c = Candidate::capture(dfs, plan, &path, entry_stats, now)?;
            let outcome = repo.admit(dfs, c)?;
            if let Admission::Kept(o) = &outcome {
                if o.retains_output() {
                    retained.insert(path.clone());
                }
            }
            out.push(record(outcome));
        }
    }
    Ok(out)
}

/// Delete this workflow's engine-owned outputs that the repository did not
/// keep.
fn cleanup(dfs: &Dfs, wf: &WorkflowId, retained: &BTreeSet<String>) -> Vec<String> {
    let mut deleted = Vec::new();
    for prefix in [format!("tmp/{wf}"), format!("restore/{wf}")] {
        for path in dfs.list(Some(&prefix)).unwrap_or_default() {
            if !retained.contains(&path) && dfs.delete(&path).is_ok() {
                deleted.push(path);
            }
        }
    }
    deleted
}

/// Canonical sorted contents of each sink, for comparing runs.
pub fn sink_contents(dfs: &Dfs, sinks: &[String]) -> Result<BTreeMap<String, Vec<String>>, DfsError> {
    sinks
        .iter()
        .map(|s| {
            let mut lines = dfs.read_lines(s)?;
            lines.sort_unstable();
            Ok((s.clone(), lines))
        })
        .collect()
}
