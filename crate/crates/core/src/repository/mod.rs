//! Persistent, ordered store of materialized plans with their statistics.
//!
//! [`RepoState`] holds the ordered entries and applies the admission,
//! ordering and eviction rules in memory. [`Repository`] persists a state in
//! a directory and serializes writers with a lock file.

mod entry;
mod persist;
mod policy;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::dfs::{Dfs, DfsError};
use crate::plan::{PhysicalPlan, PlanTextError, WorkflowId};

pub use entry::{EntryId, EntryStats, Fingerprint, RepositoryEntry};
pub use persist::{parse_meta, render_meta};
pub use policy::{
    admission_rule, estimate_cost, find_duplicate, order_entries, select_evictions, subsumption_matrix, CostEstimate,
    Rule, Throughput,
};

/// Default idle time after which an unused entry is evicted.
pub const DEFAULT_WINDOW: Duration = Duration::from_secs(7 * 24 * 3600);

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("repository i/o on '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Malformed { file: String, line: usize, message: String },
    #[error("{file}: {source}")]
    Plan {
        file: String,
        #[source]
        source: PlanTextError,
    },
    #[error("no repository entry '{0}'")]
    UnknownEntry(String),
    #[error("output dataset '{0}' does not exist")]
    MissingOutput(String),
    #[error(transparent)]
    Dfs(#[from] DfsError),
}

/// A materialized output offered to the repository.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub plan: PhysicalPlan,
    pub output_path: String,
    pub stats: EntryStats,
    pub created_at: u64,
    pub input_fingerprints: Vec<Fingerprint>,
    pub output_fingerprint: Fingerprint,
}

impl Candidate {
    /// Fingerprint the plan's inputs and `output_path` as they are now.
    pub fn capture(dfs: &Dfs, plan: PhysicalPlan, output_path: &str, stats: EntryStats, created_at: u64) -> Result<Candidate, RepoError> {
        let output_fingerprint =
            Fingerprint::of(dfs, output_path).ok_or_else(|| RepoError::MissingOutput(output_path.to_string()))?;
        let mut paths: Vec<&str> = plan.loads().into_iter().filter_map(|l| plan.op(l).path()).collect();
        paths.sort_unstable();
        paths.dedup();
        let input_fingerprints = paths
            .into_iter()
            .map(|p| Fingerprint::of(dfs, p).ok_or_else(|| DfsError::NotFound(p.to_string()).into()))
            .collect::<Result<_, RepoError>>()?;
        Ok(Candidate {
            plan,
            output_path: output_path.to_string(),
            stats,
            created_at,
            input_fingerprints,
            output_fingerprint,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum InsertOutcome {
    Inserted { id: EntryId, position: usize },
    /// An equivalent plan was already stored. `same_output` tells whether it
    /// also points at the candidate's output dataset.
    Duplicate { id: EntryId, same_output: bool },
}

impl InsertOutcome {
    pub fn id(&self) -> &EntryId {
        match self {
            InsertOutcome::Inserted { id, .. } | InsertOutcome::Duplicate { id, .. } => id,
        }
    }

    /// Whether the repository now references the candidate's output.
    pub fn retains_output(&self) -> bool {
        matches!(
            self,
            InsertOutcome::Inserted { .. } | InsertOutcome::Duplicate { same_output: true, .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Admission {
    Kept(InsertOutcome),
    Discarded(Rule),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Eviction {
    pub entry: RepositoryEntry,
    pub rule: Rule,
}

/// Whether the engine created a dataset and may delete it.
pub fn engine_owned(path: &str) -> bool {
    path.starts_with("tmp/") || path.starts_with("restore/")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepoState {
    /// Entries in scan order.
    pub entries: Vec<RepositoryEntry>,
    pub next_entry: u64,
    pub next_workflow: u64,
    pub throughput: Throughput,
}

impl RepoState {
    pub fn get(&self, id: &EntryId) -> Option<&RepositoryEntry> {
        self.entries.iter().find(|e| &e.id == id)
    }

    pub fn position(&self, id: &EntryId) -> Option<usize> {
        self.entries.iter().position(|e| &e.id == id)
    }

    pub fn next_workflow_id(&mut self) -> WorkflowId {
        self.next_workflow += 1;
        WorkflowId(format!("w{}", self.next_workflow))
    }

    /// Place `c` in scan order, or merge it into an equivalent entry.
    pub fn insert(&mut self, c: Candidate) -> InsertOutcome {
        let probe = RepositoryEntry {
            id: EntryId(String::new()),
            plan: c.plan,
            output_path: c.output_path,
            stats: c.stats,
            created_at: c.created_at,
            last_reused_at: None,
            reuse_count: 0,
            input_fingerprints: c.input_fingerprints,
            output_fingerprint: c.output_fingerprint,
        };
        if let Some(dup) = find_duplicate(&self.entries, &probe) {
            let id = dup.id.clone();
            let same_output = dup.output_path == probe.output_path;
            if same_output {
                // The output was rewritten in place; track its new state.
                let e = self.entries.iter_mut().find(|e| e.id == id).expect("duplicate is live");
                e.output_fingerprint = probe.output_fingerprint;
                e.input_fingerprints = probe.input_fingerprints;
            }
            return InsertOutcome::Duplicate { id, same_output };
        }
        self.next_entry += 1;
        let id = EntryId::from_seq(self.next_entry);
        let mut entries = std::mem::take(&mut self.entries);
        entries.push(RepositoryEntry { id: id.clone(), ..probe });
        self.entries = order_entries(entries);
        let position = self.position(&id).expect("just inserted");
        InsertOutcome::Inserted { id, position }
    }

    /// Apply the size and time rules, then insert what survives.
    pub fn admit(&mut self, c: Candidate) -> Admission {
        match admission_rule(&c.stats, &self.throughput) {
            Some(rule) => Admission::Discarded(rule),
            None => Admission::Kept(self.insert(c)),
        }
    }

    pub fn record_reuse(&mut self, id: &EntryId, at: u64) -> Result<&RepositoryEntry, RepoError> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| &e.id == id)
            .ok_or_else(|| RepoError::UnknownEntry(id.0.clone()))?;
        e.reuse_count += 1;
        e.last_reused_at = Some(at.max(e.created_at));
        Ok(e)
    }

    /// Remove idle and invalidated entries; `changed` reports whether an
    /// entry's recorded datasets differ from their current state.
    pub fn evict(&mut self, now: u64, window: Duration, changed: &dyn Fn(&RepositoryEntry) -> bool) -> Vec<Eviction> {
        let chosen = select_evictions(&self.entries, now, window, changed);
        let mut rules: Vec<Option<Rule>> = vec![None; self.entries.len()];
        for (i, r) in chosen {
            rules[i] = Some(r);
        }
        let mut out = Vec::new();
        let mut kept = Vec::new();
        for (e, r) in std::mem::take(&mut self.entries).into_iter().zip(rules) {
            match r {
                Some(rule) => out.push(Eviction { entry: e, rule }),
                None => kept.push(e),
            }
        }
        self.entries = kept;
        out
    }

    pub fn remove(&mut self, id: &EntryId) -> Result<RepositoryEntry, RepoError> {
        let i = self.position(id).ok_or_else(|| RepoError::UnknownEntry(id.0.clone()))?;
        Ok(self.entries.remove(i))
    }
}

/// Whether any dataset an entry depends on differs from its fingerprint.
pub fn entry_changed(dfs: &Dfs, e: &RepositoryEntry) -> bool {
    !e.output_is_current(dfs) || e.input_fingerprints.iter().any(|f| !f.is_current(dfs))
}

/// A repository persisted under a directory.
#[derive(Debug, Clone)]
pub struct Repository {
    root: PathBuf,
}

struct Lock(fs::File);

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

impl Repository {
    pub fn open(root: impl Into<PathBuf>) -> Result<Repository, RepoError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| RepoError::Io {
            path: root.display().to_string(),
            source,
        })?;
        Ok(Repository { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lock(&self, exclusive: bool) -> Result<Lock, RepoError> {
        let path = self.root.join(persist::LOCK_FILE);
        let io = |source| RepoError::Io {
            path: path.display().to_string(),
            source,
        };
        let f = fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io)?;
        if exclusive {
            f.lock().map_err(io)?;
        } else {
            f.lock_shared().map_err(io)?;
        }
        Ok(Lock(f))
    }

    /// A consistent copy of the current state.
    pub fn snapshot(&self) -> Result<RepoState, RepoError> {
        let _g = self.lock(false)?;
        persist::load(&self.root)
    }

    /// Entries in scan order.
    pub fn ordered_scan(&self) -> Result<Vec<RepositoryEntry>, RepoError> {
        Ok(self.snapshot()?.entries)
    }

    /// Run `f` on the freshest state under the writer lock and persist the
    /// result. Nothing is written when `f` fails.
    pub fn update<R>(&self, f: impl FnOnce(&mut RepoState) -> Result<R, RepoError>) -> Result<R, RepoError> {
        let _g = self.lock(true)?;
        let mut state = persist::load(&self.root)?;
        let r = f(&mut state)?;
        persist::save(&self.root, &state)?;
        Ok(r)
    }

    pub fn next_workflow_id(&self) -> Result<WorkflowId, RepoError> {
        self.update(|s| Ok(s.next_workflow_id()))
    }

    pub fn record_throughput(&self, bytes: u64, time: Duration) -> Result<(), RepoError> {
        self.update(|s| {
            s.throughput.record(bytes, time);
            Ok(())
        })
    }

    pub fn insert(&self, dfs: &Dfs, c: Candidate) -> Result<InsertOutcome, RepoError> {
        if !dfs.exists(&c.output_path) {
            return Err(RepoError::MissingOutput(c.output_path));
        }
        self.update(|s| Ok(s.insert(c)))
    }

    pub fn admit(&self, dfs: &Dfs, c: Candidate) -> Result<Admission, RepoError> {
        if !dfs.exists(&c.output_path) {
            return Err(RepoError::MissingOutput(c.output_path));
        }
        self.update(|s| Ok(s.admit(c)))
    }

    pub fn record_reuse(&self, id: &EntryId, at: u64) -> Result<RepositoryEntry, RepoError> {
        self.update(|s| s.record_reuse(id, at).cloned())
    }

    /// Evict idle and invalidated entries and delete their engine-owned
    /// outputs.
    pub fn evict(&self, dfs: &Dfs, now: u64, window: Duration) -> Result<Vec<Eviction>, RepoError> {
        let evicted = self.update(|s| Ok(s.evict(now, window, &|e| entry_changed(dfs, e))))?;
        for ev in &evicted {
            delete_output(dfs, &ev.entry.output_path)?;
        }
        Ok(evicted)
    }

    pub fn remove(&self, dfs: &Dfs, id: &EntryId) -> Result<RepositoryEntry, RepoError> {
        let e = self.update(|s| s.remove(id))?;
        delete_output(dfs, &e.output_path)?;
        Ok(e)
    }
}

fn delete_output(dfs: &Dfs, path: &str) -> Result<(), RepoError> {
    if !engine_owned(path) {
        return Ok(());
    }
    match dfs.delete(path) {
        Ok(()) | Err(DfsError::NotFound(_)) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::tests::physical;
    use crate::plan::OpId;

    fn put(dfs: &Dfs, path: &str, lines: &[&str]) {
        dfs.write_dataset(path, None, [lines.iter().copied()], true).unwrap();
    }

    fn candidate(dfs: &Dfs, script: &str, out: &str, input: u64, output: u64) -> Candidate {
        put(dfs, out, &["x"]);
        let stats = EntryStats {
            input_bytes: input,
            output_bytes: output,
            t_load: Duration::from_millis(40),
            t_ops: [(OpId(2), Duration::from_millis(5))].into(),
            t_sort: Duration::from_millis(3),
            t_store: Duration::from_millis(2),
            t_elapsed: Duration::from_millis(60),
        };
        Candidate::capture(dfs, physical(script), out, stats, 1_000).unwrap()
    }

    fn setup() -> (tempfile::TempDir, Dfs, Repository) {
        let dir = tempfile::tempdir().unwrap();
        let dfs = Dfs::open(dir.path().join("dfs")).unwrap();
        let repo = Repository::open(dir.path().join("repo")).unwrap();
        put(&dfs, "a", &["1\t2", "3\t4"]);
        (dir, dfs, repo)
    }

    const NARROW: &str = "A = load 'a' as (x, y);\nB = foreach A generate x;\nstore B into 'o';";
    const WIDE: &str = "A = load 'a' as (x, y);\nB = foreach A generate x;\nC = filter B by x > 1;\nstore C into 'o';";

    #[test]
    fn insert_into_empty_is_first() {
        let (_d, dfs, repo) = setup();
        let out = repo.insert(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 10)).unwrap();
        assert_eq!(out, InsertOutcome::Inserted { id: EntryId::from_seq(1), position: 0 });
    }

    #[test]
    fn subsuming_entry_precedes_regardless_of_ratio() {
        let (_d, dfs, repo) = setup();
        repo.insert(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 1)).unwrap();
        let out = repo.insert(&dfs, candidate(&dfs, WIDE, "restore/w", 100, 50)).unwrap();
        assert_eq!(out.id(), &EntryId::from_seq(2));
        let order: Vec<String> = repo.ordered_scan().unwrap().into_iter().map(|e| e.output_path).collect();
        assert_eq!(order, ["restore/w", "restore/n"]);
    }

    #[test]
    fn higher_ratio_first_among_unrelated() {
        let (_d, dfs, repo) = setup();
        let a = "A = load 'a' as (x, y);\nB = foreach A generate x;\nstore B into 'o';";
        let b = "A = load 'a' as (x, y);\nB = foreach A generate y;\nstore B into 'o';";
        // Output sizes in tenths of a GB: 150.6/6.7 vs 150.6/3.1.
        repo.insert(&dfs, candidate(&dfs, a, "restore/a", 1506, 67)).unwrap();
        repo.insert(&dfs, candidate(&dfs, b, "restore/b", 1506, 31)).unwrap();
        let order: Vec<String> = repo.ordered_scan().unwrap().into_iter().map(|e| e.output_path).collect();
        assert_eq!(order, ["restore/b", "restore/a"]);
    }

    #[test]
    fn duplicates_merge_into_the_earlier_entry() {
        let (_d, dfs, repo) = setup();
        repo.insert(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 10)).unwrap();
        let dup = repo.insert(&dfs, candidate(&dfs, NARROW, "restore/m", 100, 10)).unwrap();
        assert_eq!(dup, InsertOutcome::Duplicate { id: EntryId::from_seq(1), same_output: false });
        assert_eq!(repo.ordered_scan().unwrap().len(), 1);
    }

    #[test]
    fn missing_output_is_an_error() {
        let (_d, dfs, repo) = setup();
        let mut c = candidate(&dfs, NARROW, "restore/n", 100, 10);
        c.output_path = "restore/none".into();
        assert!(matches!(repo.insert(&dfs, c), Err(RepoError::MissingOutput(_))));
    }

    #[test]
    fn admission_rules() {
        let (_d, dfs, repo) = setup();
        let same = repo.admit(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 100)).unwrap();
        assert_eq!(same, Admission::Discarded(Rule::OutputNotSmaller));
        repo.record_throughput(10, Duration::from_secs(1)).unwrap();
        let slow = repo.admit(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 50)).unwrap();
        assert_eq!(slow, Admission::Discarded(Rule::NoTimeSaved));
        assert!(repo.ordered_scan().unwrap().is_empty());
    }

    #[test]
    fn reuse_is_counted() {
        let (_d, dfs, repo) = setup();
        let id = repo.insert(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 10)).unwrap().id().clone();
        let e = repo.record_reuse(&id, 5_000).unwrap();
        assert_eq!((e.reuse_count, e.last_reused_at), (1, Some(5_000)));
        assert!(matches!(
            repo.record_reuse(&EntryId("e999999".into()), 1),
            Err(RepoError::UnknownEntry(_))
        ));
    }

    #[test]
    fn concurrent_reuse_updates_are_not_lost() {
        let (_d, dfs, repo) = setup();
        let id = repo.insert(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 10)).unwrap().id().clone();
        let barrier = std::sync::Barrier::new(2);
        std::thread::scope(|s| {
            for _ in 0..2 {
                s.spawn(|| {
                    let r = Repository::open(repo.root()).unwrap();
                    barrier.wait();
                    r.record_reuse(&id, 2_000).unwrap();
                });
            }
        });
        assert_eq!(repo.snapshot().unwrap().get(&id).unwrap().reuse_count, 2);
    }

    #[test]
    fn idle_entries_are_evicted() {
        let (_d, dfs, repo) = setup();
        let window = Duration::from_nanos(1_000);
        let old = repo.insert(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 10)).unwrap().id().clone();
        let kept = repo.insert(&dfs, candidate(&dfs, WIDE, "restore/w", 100, 10)).unwrap().id().clone();
        repo.record_reuse(&kept, 2_500).unwrap();
        let ev = repo.evict(&dfs, 3_000, window).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((&ev[0].entry.id, ev[0].rule), (&old, Rule::Idle));
        assert!(!dfs.exists("restore/n"));
        assert!(dfs.exists("restore/w"));
    }

    #[test]
    fn changed_input_evicts_with_cascade() {
        let (_d, dfs, repo) = setup();
        repo.insert(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 10)).unwrap();
        let reader = "A = load 'restore/n' as (x);\nB = filter A by x > 1;\nstore B into 'o';";
        repo.insert(&dfs, candidate(&dfs, reader, "restore/r", 100, 10)).unwrap();
        put(&dfs, "b", &["1"]);
        let other = "A = load 'b' as (x);\nB = filter A by x > 1;\nstore B into 'o';";
        repo.insert(&dfs, candidate(&dfs, other, "restore/o", 100, 10)).unwrap();
        put(&dfs, "a", &["5\t6"]);
        let ev = repo.evict(&dfs, 2_000, DEFAULT_WINDOW).unwrap();
        let mut gone: Vec<&str> = ev.iter().map(|e| e.entry.output_path.as_str()).collect();
        gone.sort();
        assert_eq!(gone, ["restore/n", "restore/r"]);
        assert!(ev.iter().all(|e| e.rule == Rule::InputChanged));
        let live = repo.ordered_scan().unwrap();
        assert_eq!(live.len(), 1);
        assert!(live.iter().all(|e| e.input_paths().iter().all(|p| dfs.exists(p))));
    }

    #[test]
    fn empty_repository_evicts_nothing() {
        let (_d, dfs, repo) = setup();
        assert!(repo.evict(&dfs, u64::MAX, Duration::ZERO).unwrap().is_empty());
    }

    #[test]
    fn user_outputs_are_never_deleted() {
        let (_d, dfs, repo) = setup();
        let id = repo.insert(&dfs, candidate(&dfs, NARROW, "user_out", 100, 10)).unwrap().id().clone();
        repo.remove(&dfs, &id).unwrap();
        assert!(dfs.exists("user_out"));
    }

    #[test]
    fn persistence_round_trip() {
        let (_d, dfs, repo) = setup();
        repo.insert(&dfs, candidate(&dfs, NARROW, "restore/n", 100, 10)).unwrap();
        let id = repo.insert(&dfs, candidate(&dfs, WIDE, "restore/w", 100, 7)).unwrap().id().clone();
        repo.record_reuse(&id, 7_777).unwrap();
        repo.record_throughput(1234, Duration::from_nanos(5678)).unwrap();
        repo.next_workflow_id().unwrap();
        let before = repo.snapshot().unwrap();
        let again = Repository::open(repo.root()).unwrap().snapshot().unwrap();
        assert_eq!(before, again);
        assert_eq!(again.next_workflow, 1);
        // Re-saving produces identical files.
        let meta = fs::read_to_string(repo.root().join(id.0.as_str()).join("meta.kv")).unwrap();
        assert_eq!(render_meta(again.get(&id).unwrap()), meta);
    }
}
