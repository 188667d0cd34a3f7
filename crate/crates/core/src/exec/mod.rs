//! Executes MapReduce jobs and whole workflows against the local DFS.

mod eval;
mod job;
mod stats;

use std::time::Instant;

use thiserror::Error;

use crate::dfs::{Dfs, DfsError};
use crate::plan::{execution_order, JobId, OpId, PlanError, Workflow};
use crate::value::CodecError;

pub use eval::{aggregate, evaluate_operator, BoundPredicate};
pub use job::execute_job;
pub use stats::{total_times, JobStatistics, WorkflowStatistics};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("input dataset '{0}' does not exist")]
    MissingInput(String),
    #[error("output dataset '{0}' already exists")]
    OutputExists(String),
    #[error(transparent)]
    Dfs(#[from] DfsError),
    #[error("reading '{path}': {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record in '{path}': {source}")]
    Decode {
        path: String,
        #[source]
        source: CodecError,
    },
    #[error("cannot encode record: {0}")]
    Encode(#[from] CodecError),
    #[error("operator {op}: {message}")]
    Type { op: OpId, message: String },
    #[error("operator {op}: column '{column}' does not resolve")]
    Column { op: OpId, column: String },
    #[error("invalid plan: {0}")]
    Plan(#[from] PlanError),
    #[error("job {job} failed: {source}")]
    Job {
        job: JobId,
        #[source]
        source: Box<ExecError>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecConfig {
    /// Threads used for tasks and for independent jobs.
    pub parallelism: usize,
    /// Number of reduce partitions.
    pub reducers: usize,
    /// Target bytes per input split.
    pub chunk_size: u64,
    /// Replace existing output datasets.
    pub overwrite: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            reducers: 4,
            chunk_size: 16 << 20,
            overwrite: false,
        }
    }
}

/// Outcome of a workflow run. Statistics cover every job that finished,
/// also when a later job failed.
#[derive(Debug)]
pub struct WorkflowRun {
    pub stats: WorkflowStatistics,
    pub error: Option<ExecError>,
}

impl WorkflowRun {
    pub fn into_result(self) -> Result<WorkflowStatistics, ExecError> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.stats),
        }
    }
}

/// Run all jobs of `wf` in dependency order. Jobs in the same batch run
/// concurrently. After a failure no further batch starts.
pub fn execute_workflow(dfs: &Dfs, wf: &Workflow, cfg: &ExecConfig) -> WorkflowRun {
    let start = Instant::now();
    let mut stats = WorkflowStatistics {
        deps: wf.deps.clone(),
        ..Default::default()
    };
    let batches = match execution_order(wf) {
        Ok(b) => b,
        Err(e) => {
            return WorkflowRun {
                stats,
                error: Some(e.into()),
            }
        }
    };
    let mut error = None;
    for (i, batch) in batches.iter().enumerate() {
        let jobs: Vec<_> = batch.iter().filter_map(|id| wf.job(id)).collect();
        // Split the thread budget between the jobs of the batch.
        let per_job = ExecConfig {
            parallelism: (cfg.parallelism / jobs.len().max(1)).max(1),
            ..cfg.clone()
        };
        let results: Vec<Result<JobStatistics, ExecError>> = if jobs.len() == 1 || cfg.parallelism <= 1 {
            jobs.iter().map(|j| execute_job(dfs, j, &per_job)).collect()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = jobs
                    .iter()
                    .map(|j| {
                        let per_job = &per_job;
                        s.spawn(move || execute_job(dfs, j, per_job))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("job thread panicked")).collect()
            })
        };
        for (job, r) in jobs.iter().zip(results) {
            match r {
                Ok(js) => {
                    stats.jobs.insert(job.id.clone(), js);
                }
                Err(e) if error.is_none() => {
                    stats.failed = Some(job.id.clone());
                    error = Some(ExecError::Job {
                        job: job.id.clone(),
                        source: Box::new(e),
                    });
                }
                Err(_) => {}
            }
        }
        if error.is_some() {
            stats.skipped = batches[i + 1..].iter().flatten().cloned().collect();
            break;
        }
    }
    stats.wall_time = start.elapsed();
    stats.finalize();
    WorkflowRun { stats, error }
}
