use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dfs::Dfs;
use crate::plan::{OpId, OpKind, PhysicalPlan};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntryId(pub String);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl EntryId {
    pub fn from_seq(n: u64) -> EntryId {
        EntryId(format!("e{n:06}"))
    }
}

/// State of a dataset at the time an entry was recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub path: String,
    pub mtime: u64,
    pub bytes: u64,
}

impl Fingerprint {
    pub fn of(dfs: &Dfs, path: &str) -> Option<Fingerprint> {
        let ds = dfs.metadata(path).ok()?;
        Some(Fingerprint {
            path: path.to_string(),
            mtime: ds.mtime,
            bytes: ds.byte_size,
        })
    }

    /// Whether the dataset still exists unchanged.
    pub fn is_current(&self, dfs: &Dfs) -> bool {
        Fingerprint::of(dfs, &self.path).as_ref() == Some(self)
    }
}

/// Statistics of the (sub-)job that produced an entry's output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryStats {
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub t_load: Duration,
    pub t_ops: BTreeMap<OpId, Duration>,
    pub t_sort: Duration,
    pub t_store: Duration,
    pub t_elapsed: Duration,
}

impl EntryStats {
    /// Input to output size ratio; an empty output counts as infinite.
    pub fn ratio(&self) -> f64 {
        if self.output_bytes == 0 {
            f64::INFINITY
        } else {
            self.input_bytes as f64 / self.output_bytes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepositoryEntry {
    pub id: EntryId,
    /// Single-Store plan whose Store writes `output_path`.
    pub plan: PhysicalPlan,
    pub output_path: String,
    pub stats: EntryStats,
    /// Nanoseconds since the Unix epoch.
    pub created_at: u64,
    pub last_reused_at: Option<u64>,
    pub reuse_count: u64,
    pub input_fingerprints: Vec<Fingerprint>,
    pub output_fingerprint: Fingerprint,
}

impl RepositoryEntry {
    /// Paths read by the entry's plan.
    pub fn input_paths(&self) -> Vec<&str> {
        self.plan
            .ops
            .values()
            .filter(|o| o.kind() == OpKind::Load)
            .filter_map(|o| o.path())
            .collect()
    }

    /// Last time the entry was created or reused.
    pub fn last_touched(&self) -> u64 {
        self.last_reused_at.map_or(self.created_at, |r| r.max(self.created_at))
    }

    /// Whether the output dataset is present and unmodified.
    pub fn output_is_current(&self, dfs: &Dfs) -> bool {
        self.output_fingerprint.is_current(dfs)
    }
}
