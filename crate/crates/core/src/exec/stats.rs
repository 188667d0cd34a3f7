use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::plan::{JobId, OpId};

/// Timings and sizes recorded while running one job.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobStatistics {
    pub job_id: JobId,
    /// Sum of the sizes of every Load's dataset.
    pub input_bytes: u64,
    /// Size of the job's primary output.
    pub output_bytes: u64,
    pub t_load: Duration,
    /// Time spent in each operator other than Load and Store.
    pub t_ops: BTreeMap<OpId, Duration>,
    pub t_sort: Duration,
    pub t_store: Duration,
    pub t_elapsed: Duration,
    pub load_times: BTreeMap<OpId, Duration>,
    pub load_bytes: BTreeMap<OpId, u64>,
    pub store_times: BTreeMap<OpId, Duration>,
    pub store_bytes: BTreeMap<OpId, u64>,
    pub map_tasks: usize,
    pub reduce_tasks: usize,
    pub mapper_avg: Duration,
    pub reducer_avg: Duration,
}

impl JobStatistics {
    /// `t_load + Σ t_ops + t_sort + t_store`.
    pub fn phase_sum(&self) -> Duration {
        self.t_load + self.t_ops.values().sum::<Duration>() + self.t_sort + self.t_store
    }

    /// Time attributed to operator `id`, whatever its kind.
    pub fn op_time(&self, id: OpId) -> Duration {
        self.t_ops
            .get(&id)
            .or_else(|| self.load_times.get(&id))
            .or_else(|| self.store_times.get(&id))
            .copied()
            .unwrap_or_default()
    }
}

/// Total time of each job counting the critical path of its dependencies:
/// `t_total(j) = t_elapsed(j) + max over deps d of t_total(d)`, where an
/// empty max is zero.
pub fn total_times(
    elapsed: &BTreeMap<JobId, Duration>,
    deps: &[(JobId, JobId)],
) -> BTreeMap<JobId, Duration> {
    let mut memo: BTreeMap<JobId, Duration> = BTreeMap::new();
    fn go(
        j: &JobId,
        elapsed: &BTreeMap<JobId, Duration>,
        deps: &[(JobId, JobId)],
        memo: &mut BTreeMap<JobId, Duration>,
        depth: usize,
    ) -> Duration {
        if let Some(t) = memo.get(j) {
            return *t;
        }
        let before = if depth > elapsed.len() {
            Duration::ZERO
        } else {
            deps.iter()
                .filter(|(_, c)| c == j)
                .map(|(p, _)| go(p, elapsed, deps, memo, depth + 1))
                .max()
                .unwrap_or_default()
        };
        let t = elapsed.get(j).copied().unwrap_or_default() + before;
        memo.insert(j.clone(), t);
        t
    }
    for j in elapsed.keys() {
        go(j, elapsed, deps, &mut memo, 0);
    }
    memo.retain(|k, _| elapsed.contains_key(k));
    memo
}

/// Statistics of a whole workflow run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowStatistics {
    pub jobs: BTreeMap<JobId, JobStatistics>,
    pub deps: Vec<(JobId, JobId)>,
    pub t_total: BTreeMap<JobId, Duration>,
    /// Largest `t_total` over all jobs.
    pub critical_path: Duration,
    pub wall_time: Duration,
    pub failed: Option<JobId>,
    pub skipped: Vec<JobId>,
}

impl WorkflowStatistics {
    pub fn finalize(&mut self) {
        let elapsed = self.jobs.iter().map(|(k, v)| (k.clone(), v.t_elapsed)).collect();
        self.t_total = total_times(&elapsed, &self.deps);
        self.critical_path = self.t_total.values().max().copied().unwrap_or_default();
    }
}
