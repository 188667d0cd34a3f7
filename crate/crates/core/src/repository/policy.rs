//! Ordering, admission and eviction rules, and the cost model behind them.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::Serialize;

use super::entry::{EntryStats, RepositoryEntry};
use crate::matcher::subsumes;

/// The additive per-job cost decomposition and the dependency-aware total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostEstimate {
    pub t_load: Duration,
    pub t_ops_sum: Duration,
    pub t_sort: Duration,
    pub t_store: Duration,
    /// `t_load + t_ops_sum + t_sort + t_store`.
    pub et: Duration,
    /// `et` plus the largest total among the dependencies.
    pub t_total: Duration,
}

/// Estimate a job from its phase times and the totals of the jobs it still
/// depends on (an empty list contributes nothing).
pub fn estimate_cost(stats: &EntryStats, dep_totals: &[Duration]) -> CostEstimate {
    let t_ops_sum = stats.t_ops.values().sum();
    let et = stats.t_load + t_ops_sum + stats.t_sort + stats.t_store;
    CostEstimate {
        t_load: stats.t_load,
        t_ops_sum,
        t_sort: stats.t_sort,
        t_store: stats.t_store,
        et,
        t_total: et + dep_totals.iter().max().copied().unwrap_or_default(),
    }
}

/// Running average read throughput used to price loading a stored output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Throughput {
    pub bytes: u64,
    pub nanos: u64,
}

impl Throughput {
    pub fn record(&mut self, bytes: u64, time: Duration) {
        self.bytes = self.bytes.saturating_add(bytes);
        self.nanos = self.nanos.saturating_add(time.as_nanos() as u64);
    }

    pub fn nanos_per_byte(&self) -> f64 {
        if self.bytes == 0 {
            0.0
        } else {
            self.nanos as f64 / self.bytes as f64
        }
    }

    pub fn load_time(&self, bytes: u64) -> Duration {
        Duration::from_secs_f64(bytes as f64 * self.nanos_per_byte() / 1e9)
    }
}

/// Which rule decided a candidate's or entry's fate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Rule {
    /// Output not smaller than input.
    OutputNotSmaller,
    /// Reading the output is not cheaper than recomputing it.
    NoTimeSaved,
    /// Not reused within the eviction window.
    Idle,
    /// An input or the output changed or disappeared.
    InputChanged,
}

impl Rule {
    pub fn number(self) -> u8 {
        match self {
            Rule::OutputNotSmaller => 1,
            Rule::NoTimeSaved => 2,
            Rule::Idle => 3,
            Rule::InputChanged => 4,
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rule {}", self.number())
    }
}

/// Size and time rules checked before a candidate is inserted.
pub fn admission_rule(stats: &EntryStats, throughput: &Throughput) -> Option<Rule> {
    if stats.output_bytes >= stats.input_bytes {
        return Some(Rule::OutputNotSmaller);
    }
    let et = estimate_cost(stats, &[]).et;
    if throughput.load_time(stats.output_bytes) >= et {
        return Some(Rule::NoTimeSaved);
    }
    None
}

/// Sort key among entries that do not subsume each other: higher ratio,
/// then longer elapsed time, then lower id.
fn preference(e: &RepositoryEntry) -> (std::cmp::Reverse<OrdF64>, std::cmp::Reverse<Duration>, &str) {
    (
        std::cmp::Reverse(OrdF64(e.stats.ratio())),
        std::cmp::Reverse(e.stats.t_elapsed),
        e.id.0.as_str(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// `m[a][b]` is true when entry `a`'s plan subsumes entry `b`'s.
pub fn subsumption_matrix(entries: &[RepositoryEntry]) -> Vec<Vec<bool>> {
    entries
        .iter()
        .enumerate()
        .map(|(i, a)| {
            entries
                .iter()
                .enumerate()
                .map(|(j, b)| i != j && subsumes(&a.plan, &b.plan))
                .collect()
        })
        .collect()
}

/// Order entries so that every entry precedes the ones it strictly
/// subsumes, breaking remaining freedom by [`preference`].
pub fn order_entries(entries: Vec<RepositoryEntry>) -> Vec<RepositoryEntry> {
    let m = subsumption_matrix(&entries);
    let n = entries.len();
    let before = |a: usize, b: usize| m[a][b] && !m[b][a];
    let mut indegree: Vec<usize> = (0..n).map(|b| (0..n).filter(|&a| before(a, b)).count()).collect();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let ready = (0..n).filter(|&i| !placed[i] && indegree[i] == 0);
        // A cycle cannot arise from strict containment; fall back to the
        // preference among what is left if one ever does.
        let pick = ready
            .min_by(|&a, &b| preference(&entries[a]).cmp(&preference(&entries[b])))
            .or_else(|| {
                (0..n)
                    .filter(|&i| !placed[i])
                    .min_by(|&a, &b| preference(&entries[a]).cmp(&preference(&entries[b])))
            })
            .expect("unplaced entry exists");
        placed[pick] = true;
        order.push(pick);
        for b in 0..n {
            if !placed[b] && before(pick, b) {
                indegree[b] -= 1;
            }
        }
    }
    let mut slots: Vec<Option<RepositoryEntry>> = entries.into_iter().map(Some).collect();
    order.into_iter().map(|i| slots[i].take().unwrap()).collect()
}

/// The existing entry a candidate duplicates: each subsumes the other.
pub fn find_duplicate<'a>(entries: &'a [RepositoryEntry], candidate: &RepositoryEntry) -> Option<&'a RepositoryEntry> {
    entries
        .iter()
        .find(|e| subsumes(&e.plan, &candidate.plan) && subsumes(&candidate.plan, &e.plan))
}

/// Entries to evict and the rule that fired for each. `changed` tells
/// whether an entry's recorded inputs or output no longer match the DFS.
pub fn select_evictions(
    entries: &[RepositoryEntry],
    now: u64,
    window: Duration,
    changed: &dyn Fn(&RepositoryEntry) -> bool,
) -> Vec<(usize, Rule)> {
    let horizon = now.saturating_sub(window.as_nanos() as u64);
    let mut out: BTreeMap<usize, Rule> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        if changed(e) {
            out.insert(i, Rule::InputChanged);
        } else if e.last_touched() < horizon {
            out.insert(i, Rule::Idle);
        }
    }
    // Entries reading an evicted output go as well.
    loop {
        let gone: BTreeSet<&str> = out.keys().map(|&i| entries[i].output_path.as_str()).collect();
        let more: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(i, e)| !out.contains_key(i) && e.input_paths().iter().any(|p| gone.contains(p)))
            .map(|(i, _)| i)
            .collect();
        if more.is_empty() {
            break;
        }
        for i in more {
            out.insert(i, Rule::InputChanged);
        }
    }
    out.into_iter().collect()
}
