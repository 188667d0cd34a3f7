//! A directory-backed stand-in for a distributed file system.
//!
//! Each dataset lives at `<root>/<path>/` as a set of `part-NNNNN` files plus
//! a `.meta` sidecar (`schema=`, `bytes=`, `mtime=`). Writes are staged in a
//! private directory and renamed into place on commit, so readers never see
//! a partially written dataset.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use thiserror::Error;

use crate::schema::Schema;

const META_FILE: &str = ".meta";
const STAGING_DIR: &str = ".staging";

#[derive(Debug, Error)]
pub enum DfsError {
    #[error("dataset '{0}' not found")]
    NotFound(String),
    #[error("dataset '{0}' already exists")]
    AlreadyExists(String),
    #[error("invalid dataset path '{0}'")]
    InvalidPath(String),
    #[error("concurrent access conflict on '{path}': {reason}")]
    Conflict { path: String, reason: &'static str },
    #[error("corrupt metadata for '{path}': {reason}")]
    Meta { path: String, reason: String },
    #[error("i/o error on '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = DfsError> = std::result::Result<T, E>;

fn io_err(path: &str) -> impl FnOnce(io::Error) -> DfsError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            DfsError::NotFound(path.to_string())
        } else {
            DfsError::Io {
                path: path.to_string(),
                source,
            }
        }
    }
}

/// Metadata of a committed dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dataset {
    pub path: String,
    pub parts: Vec<PathBuf>,
    pub schema: Option<Schema>,
    pub byte_size: u64,
    pub mtime: u64,
}

/// A byte range of one part file, aligned to record boundaries when read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSplit {
    pub part: PathBuf,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lease {
    Writing,
    Reading(usize),
}

#[derive(Debug, Default)]
struct LeaseTable {
    leases: Mutex<HashMap<String, Lease>>,
}

impl LeaseTable {
    fn acquire_write(self: &Arc<Self>, path: &str) -> Result<LeaseGuard> {
        let mut map = self.leases.lock().unwrap();
        match map.get(path) {
            Some(Lease::Writing) => Err(DfsError::Conflict {
                path: path.to_string(),
                reason: "already open for writing",
            }),
            Some(Lease::Reading(_)) => Err(DfsError::Conflict {
                path: path.to_string(),
                reason: "write requested while readers are active",
            }),
            None => {
                map.insert(path.to_string(), Lease::Writing);
                Ok(LeaseGuard {
                    table: Arc::clone(self),
                    path: path.to_string(),
                    write: true,
                })
            }
        }
    }

    fn acquire_read(self: &Arc<Self>, path: &str) -> Result<LeaseGuard> {
        let mut map = self.leases.lock().unwrap();
        match map.get_mut(path) {
            Some(Lease::Writing) => Err(DfsError::Conflict {
                path: path.to_string(),
                reason: "read requested while a writer is active",
            }),
            Some(Lease::Reading(n)) => {
                *n += 1;
                Ok(self.read_guard(path))
            }
            None => {
                map.insert(path.to_string(), Lease::Reading(1));
                Ok(self.read_guard(path))
            }
        }
    }

    fn read_guard(self: &Arc<Self>, path: &str) -> LeaseGuard {
        LeaseGuard {
            table: Arc::clone(self),
            path: path.to_string(),
            write: false,
        }
    }
}

/// Holds a read or write lease on one dataset path until dropped.
#[derive(Debug)]
pub struct LeaseGuard {
    table: Arc<LeaseTable>,
    path: String,
    write: bool,
}

impl Drop for LeaseGuard {
    fn drop(&mut self) {
        let mut map = self.table.leases.lock().unwrap();
        if self.write {
            map.remove(&self.path);
        } else if let Some(Lease::Reading(n)) = map.get_mut(&self.path) {
            *n -= 1;
            if *n == 0 {
                map.remove(&self.path);
            }
        }
    }
}

#[derive(Debug)]
pub struct Dfs {
    root: PathBuf,
    leases: Arc<LeaseTable>,
    last_stamp: AtomicU64,
    staging_seq: AtomicU64,
}

/// Nanoseconds since the Unix epoch.
pub fn now_nanos() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

pub fn validate_path(path: &str) -> Result<()> {
    let ok = !path.is_empty()
        && path.split('/').all(|c| {
            !c.is_empty()
                && !c.starts_with('.')
                && c.chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || matches!(ch, '_' | '-' | '.'))
        });
    if ok {
        Ok(())
    } else {
        Err(DfsError::InvalidPath(path.to_string()))
    }
}

impl Dfs {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let display = root.display().to_string();
        fs::create_dir_all(root.join(STAGING_DIR)).map_err(io_err(&display))?;
        Ok(Dfs {
            root,
            leases: Arc::default(),
            last_stamp: AtomicU64::new(0),
            staging_seq: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, path: &str) -> PathBuf {
        self.root.join(path)
    }

    /// A strictly increasing stamp, never behind the wall clock.
    fn stamp(&self, floor: u64) -> u64 {
        let now = now_nanos().max(floor + 1);
        let mut prev = self.last_stamp.load(Ordering::SeqCst);
        loop {
            let next = now.max(prev + 1);
            match self
                .last_stamp
                .compare_exchange(prev, next, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return next,
                Err(p) => prev = p,
            }
        }
    }

    pub fn exists(&self, path: &str) -> bool {
        validate_path(path).is_ok() && self.dir(path).join(META_FILE).is_file()
    }

    pub fn metadata(&self, path: &str) -> Result<Dataset> {
        validate_path(path)?;
        let dir = self.dir(path);
        let meta = fs::read_to_string(dir.join(META_FILE)).map_err(io_err(path))?;
        let mut schema = None;
        let mut bytes = None;
        let mut mtime = None;
        for line in meta.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let bad = |reason: String| DfsError::Meta {
                path: path.to_string(),
                reason,
            };
            match k {
                "schema" if !v.is_empty() => {
                    schema = Some(Schema::parse(v).map_err(|e| bad(e.to_string()))?)
                }
                "bytes" => bytes = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "mtime" => mtime = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                _ => {}
            }
        }
        let mut parts: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("part-"))
            .map(|e| e.path())
            .collect();
        parts.sort();
        Ok(Dataset {
            path: path.to_string(),
            parts,
            schema,
            byte_size: bytes.ok_or_else(|| DfsError::Meta {
                path: path.to_string(),
                reason: "missing bytes".into(),
            })?,
            mtime: mtime.ok_or_else(|| DfsError::Meta {
                path: path.to_string(),
                reason: "missing mtime".into(),
            })?,
        })
    }

    pub fn size(&self, path: &str) -> Result<u64> {
        self.metadata(path).map(|d| d.byte_size)
    }

    pub fn mtime(&self, path: &str) -> Result<u64> {
        self.metadata(path).map(|d| d.mtime)
    }

    pub fn delete(&self, path: &str) -> Result<()> {
        validate_path(path)?;
        let _lease = self.leases.acquire_write(path)?;
        if !self.exists(path) {
            return Err(DfsError::NotFound(path.to_string()));
        }
        fs::remove_dir_all(self.dir(path)).map_err(io_err(path))
    }

    /// Take a read lease for as long as the guard lives.
    pub fn lease_read(&self, path: &str) -> Result<LeaseGuard> {
        validate_path(path)?;
        self.leases.acquire_read(path)
    }

    /// Open a dataset for streaming reads of its record lines.
    pub fn read_dataset(&self, path: &str) -> Result<(Dataset, LineReader)> {
        let lease = self.lease_read(path)?;
        let ds = self.metadata(path)?;
        let reader = LineReader {
            path: path.to_string(),
            parts: ds.parts.clone().into_iter(),
            current: None,
            _lease: lease,
        };
        Ok((ds, reader))
    }

    /// All record lines of a dataset.
    pub fn read_lines(&self, path: &str) -> Result<Vec<String>> {
        let (_, reader) = self.read_dataset(path)?;
        reader.collect()
    }

    /// Cut a dataset into splits of roughly `chunk_size` bytes each.
    pub fn splits(&self, ds: &Dataset, chunk_size: u64) -> Result<Vec<InputSplit>> {
        let chunk_size = chunk_size.max(1);
        let mut out = Vec::new();
        for part in &ds.parts {
            let len = fs::metadata(part).map_err(io_err(&ds.path))?.len();
            let mut start = 0;
            while start < len {
                let end = (start + chunk_size).min(len);
                out.push(InputSplit {
                    part: part.clone(),
                    start,
                    end,
                });
                start = end;
            }
        }
        Ok(out)
    }

    /// Begin writing `path`. Fails if it exists and `overwrite` is not set.
    pub fn create(&self, path: &str, overwrite: bool) -> Result<DatasetWriter<'_>> {
        validate_path(path)?;
        let lease = self.leases.acquire_write(path)?;
        if self.exists(path) && !overwrite {
            return Err(DfsError::AlreadyExists(path.to_string()));
        }
        self.check_nesting(path)?;
        let seq = self.staging_seq.fetch_add(1, Ordering::SeqCst);
        let staging = self
            .root
            .join(STAGING_DIR)
            .join(format!("{}-{}-{}", std::process::id(), now_nanos(), seq));
        fs::create_dir_all(&staging).map_err(io_err(path))?;
        Ok(DatasetWriter {
            dfs: self,
            path: path.to_string(),
            staging,
            committed: false,
            _lease: lease,
        })
    }

    fn check_nesting(&self, path: &str) -> Result<()> {
        let mut prefix = String::new();
        let comps: Vec<&str> = path.split('/').collect();
        for c in &comps[..comps.len() - 1] {
            if !prefix.is_empty() {
                prefix.push('/');
            }
            prefix.push_str(c);
            if self.exists(&prefix) {
                return Err(DfsError::InvalidPath(format!(
                    "{path} (inside dataset {prefix})"
                )));
            }
        }
        let dir = self.dir(path);
        if dir.is_dir() && !dir.join(META_FILE).is_file() {
            let non_empty = fs::read_dir(&dir)
                .map(|mut d| d.next().is_some())
                .unwrap_or(false);
            if non_empty {
                return Err(DfsError::InvalidPath(format!(
                    "{path} (directory holds other datasets)"
                )));
            }
        }
        Ok(())
    }

    /// Write a whole dataset from one record stream per partition.
    pub fn write_dataset<P, I>(
        &self,
        path: &str,
        schema: Option<&Schema>,
        partitions: P,
        overwrite: bool,
    ) -> Result<Dataset>
    where
        P: IntoIterator<Item = I>,
        I: IntoIterator,
        I::Item: AsRef<str>,
    {
        let writer = self.create(path, overwrite)?;
        for (i, records) in partitions.into_iter().enumerate() {
            let mut part = writer.part(i)?;
            for r in records {
                part.write_record(r.as_ref())?;
            }
            part.finish()?;
        }
        writer.commit(schema)
    }

    /// Rewrite a dataset as a single part with its lines sorted bytewise.
    pub fn canonicalize(&self, path: &str) -> Result<Dataset> {
        let ds = self.metadata(path)?;
        let mut lines = self.read_lines(path)?;
        lines.sort_unstable();
        self.write_dataset(path, ds.schema.as_ref(), [lines], true)
    }

    /// Names of every committed dataset under `prefix` (or everywhere).
    pub fn list(&self, prefix: Option<&str>) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let start = match prefix {
            Some(p) => self.dir(p),
            None => self.root.clone(),
        };
        let mut stack = vec![start];
        while let Some(dir) = stack.pop() {
            let Ok(entries) = fs::read_dir(&dir) else { continue };
            if dir.join(META_FILE).is_file() {
                if let Ok(rel) = dir.strip_prefix(&self.root) {
                    out.push(rel.to_string_lossy().replace('\\', "/"));
                }
                continue;
            }
            for e in entries.flatten() {
                let name = e.file_name();
                if name.to_string_lossy().starts_with('.') {
                    continue;
                }
                if e.path().is_dir() {
                    stack.push(e.path());
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// An in-progress dataset write. Dropping it without `commit` discards it.
#[derive(Debug)]
pub struct DatasetWriter<'a> {
    dfs: &'a Dfs,
    path: String,
    staging: PathBuf,
    committed: bool,
    _lease: LeaseGuard,
}

impl DatasetWriter<'_> {
    pub fn path(&self) -> &str {
        &self.path
    }

    /// Create part file number `index`. Parts may be written from different
    /// threads concurrently.
    pub fn part(&self, index: usize) -> Result<PartWriter> {
        let file_path = self.staging.join(format!("part-{index:05}"));
        let file = File::create(&file_path).map_err(io_err(&self.path))?;
        Ok(PartWriter {
            dataset: self.path.clone(),
            out: BufWriter::with_capacity(1 << 16, file),
            bytes: 0,
            records: 0,
        })
    }

    pub fn commit(mut self, schema: Option<&Schema>) -> Result<Dataset> {
        let path = self.path.clone();
        let mut bytes = 0;
        for e in fs::read_dir(&self.staging).map_err(io_err(&path))? {
            let e = e.map_err(io_err(&path))?;
            bytes += e.metadata().map_err(io_err(&path))?.len();
        }
        let prev = self.dfs.metadata(&path).map(|d| d.mtime).unwrap_or(0);
        let mtime = self.dfs.stamp(prev);
        let meta = format!(
            "schema={}\nbytes={bytes}\nmtime={mtime}\n",
            schema.map(|s| s.to_string()).unwrap_or_default()
        );
        fs::write(self.staging.join(META_FILE), meta).map_err(io_err(&path))?;

        let target = self.dfs.dir(&path);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(io_err(&path))?;
        }
        if target.exists() {
            let trash = self.staging.with_extension("old");
            fs::rename(&target, &trash).map_err(io_err(&path))?;
            fs::rename(&self.staging, &target).map_err(io_err(&path))?;
            fs::remove_dir_all(&trash).map_err(io_err(&path))?;
        } else {
            fs::rename(&self.staging, &target).map_err(io_err(&path))?;
        }
        self.committed = true;
        self.dfs.metadata(&path)
    }
}

impl Drop for DatasetWriter<'_> {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

#[derive(Debug)]
pub struct PartWriter {
    dataset: String,
    out: BufWriter<File>,
    bytes: u64,
    records: u64,
}

impl PartWriter {
    pub fn write_record(&mut self, line: &str) -> Result<()> {
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(io_err(&self.dataset))?;
        self.bytes += line.len() as u64 + 1;
        self.records += 1;
        Ok(())
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// Flush and return the number of bytes written.
    pub fn finish(mut self) -> Result<u64> {
        self.out.flush().map_err(io_err(&self.dataset))?;
        Ok(self.bytes)
    }
}

/// Streams the record lines of a dataset, part by part.
#[derive(Debug)]
pub struct LineReader {
    path: String,
    parts: std::vec::IntoIter<PathBuf>,
    current: Option<io::Lines<BufReader<File>>>,
    _lease: LeaseGuard,
}

impl Iterator for LineReader {
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(lines) = &mut self.current {
                match lines.next() {
                    Some(Ok(l)) => return Some(Ok(l)),
                    Some(Err(e)) => return Some(Err(io_err(&self.path)(e))),
                    None => self.current = None,
                }
            }
            let part = self.parts.next()?;
            match File::open(&part) {
                Ok(f) => self.current = Some(BufReader::new(f).lines()),
                Err(e) => return Some(Err(io_err(&self.path)(e))),
            }
        }
    }
}

/// Read the records of one split into `buf`, returning the line slices.
///
/// A split that starts mid-record skips to the next record boundary; a record
/// that starts before `end` is read in full even if it crosses it.
pub fn read_split(split: &InputSplit, buf: &mut String) -> io::Result<()> {
    buf.clear();
    let mut f = File::open(&split.part)?;
    let mut start = split.start;
    if start > 0 {
        f.seek(SeekFrom::Start(start - 1))?;
        let mut r = BufReader::new(&mut f);
        let mut skipped = Vec::new();
        let n = r.read_until(b'\n', &mut skipped)?;
        start = start - 1 + n as u64;
    }
    if start >= split.end {
        return Ok(());
    }
    f.seek(SeekFrom::Start(start))?;
    let mut r = BufReader::new(f);
    let mut bytes = Vec::with_capacity((split.end - start) as usize + 256);
    (&mut r).take(split.end - start).read_to_end(&mut bytes)?;
    if bytes.last().is_some_and(|&b| b != b'\n') {
        r.read_until(b'\n', &mut bytes)?;
    }
    *buf = String::from_utf8(bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dfs() -> (tempfile::TempDir, Dfs) {
        let dir = tempfile::tempdir().unwrap();
        let dfs = Dfs::open(dir.path()).unwrap();
        (dir, dfs)
    }

    #[test]
    fn empty_partitions() {
        let (_d, dfs) = dfs();
        let parts: Vec<Vec<String>> = vec![vec![]; 4];
        let ds = dfs.write_dataset("out/empty", None, parts, false).unwrap();
        assert_eq!(ds.parts.len(), 4);
        assert_eq!(ds.byte_size, 0);
        assert!(ds.parts[3].ends_with("part-00003"));
        assert!(dfs.read_lines("out/empty").unwrap().is_empty());
    }

    #[test]
    fn size_matches_readable_bytes() {
        let (_d, dfs) = dfs();
        let parts = vec![vec!["a\tb", "cc"], vec!["dddd"]];
        let schema = Schema::atoms(&["x", "y"]);
        let ds = dfs.write_dataset("t", Some(&schema), parts, false).unwrap();
        let lines = dfs.read_lines("t").unwrap();
        let readable: u64 = lines.iter().map(|l| l.len() as u64 + 1).sum();
        assert_eq!(ds.byte_size, readable);
        assert_eq!(dfs.size("t").unwrap(), 12);
        assert_eq!(dfs.metadata("t").unwrap().schema, Some(schema));
    }

    #[test]
    fn rewrite_bumps_mtime_and_requires_overwrite() {
        let (_d, dfs) = dfs();
        let m1 = dfs.write_dataset("t", None, [["x"]], false).unwrap().mtime;
        assert!(matches!(
            dfs.write_dataset("t", None, [["y"]], false),
            Err(DfsError::AlreadyExists(_))
        ));
        let m2 = dfs.write_dataset("t", None, [["y"]], true).unwrap().mtime;
        assert!(m2 > m1);
        assert_eq!(dfs.read_lines("t").unwrap(), vec!["y"]);
    }

    #[test]
    fn delete_then_exists() {
        let (_d, dfs) = dfs();
        dfs.write_dataset("a/b", None, [["x"]], false).unwrap();
        assert!(dfs.exists("a/b"));
        dfs.delete("a/b").unwrap();
        assert!(!dfs.exists("a/b"));
        assert!(matches!(dfs.size("a/b"), Err(DfsError::NotFound(_))));
        assert!(matches!(dfs.delete("a/b"), Err(DfsError::NotFound(_))));
    }

    #[test]
    fn reader_and_writer_conflict() {
        let (_d, dfs) = dfs();
        dfs.write_dataset("t", None, [["x"]], false).unwrap();
        let (_, reader) = dfs.read_dataset("t").unwrap();
        assert!(matches!(
            dfs.create("t", true),
            Err(DfsError::Conflict { .. })
        ));
        drop(reader);
        let w = dfs.create("t", true).unwrap();
        assert!(matches!(dfs.read_dataset("t"), Err(DfsError::Conflict { .. })));
        assert!(matches!(dfs.create("t", true), Err(DfsError::Conflict { .. })));
        drop(w);
        assert_eq!(dfs.read_lines("t").unwrap(), vec!["x"]);
    }

    #[test]
    fn abandoned_write_leaves_nothing() {
        let (_d, dfs) = dfs();
        {
            let w = dfs.create("t", false).unwrap();
            let mut p = w.part(0).unwrap();
            p.write_record("partial").unwrap();
        }
        assert!(!dfs.exists("t"));
    }

    #[test]
    fn invalid_and_nested_paths() {
        let (_d, dfs) = dfs();
        for bad in ["", "/abs", "a//b", "../x", ".hidden", "a b"] {
            assert!(matches!(dfs.create(bad, false), Err(DfsError::InvalidPath(_))), "{bad}");
        }
        dfs.write_dataset("a", None, [["x"]], false).unwrap();
        assert!(matches!(dfs.create("a/b", false), Err(DfsError::InvalidPath(_))));
    }

    #[test]
    fn splits_cover_every_record_once() {
        let (_d, dfs) = dfs();
        let lines: Vec<String> = (0..500).map(|i| format!("row-{i}-{}", "x".repeat(i % 17))).collect();
        let ds = dfs
            .write_dataset("t", None, [lines[..300].to_vec(), lines[300..].to_vec()], false)
            .unwrap();
        for chunk in [1, 7, 64, 1000, 1 << 20] {
            let mut got = Vec::new();
            let mut buf = String::new();
            for s in dfs.splits(&ds, chunk).unwrap() {
                read_split(&s, &mut buf).unwrap();
                got.extend(buf.lines().map(str::to_string));
            }
            assert_eq!(got, lines, "chunk {chunk}");
        }
    }

    #[test]
    fn list_and_canonicalize() {
        let (_d, dfs) = dfs();
        dfs.write_dataset("x/one", None, [vec!["b", "a"], vec!["c"]], false).unwrap();
        dfs.write_dataset("two", None, [["z"]], false).unwrap();
        assert_eq!(dfs.list(None).unwrap(), vec!["two", "x/one"]);
        let ds = dfs.canonicalize("x/one").unwrap();
        assert_eq!(ds.parts.len(), 1);
        assert_eq!(dfs.read_lines("x/one").unwrap(), vec!["a", "b", "c"]);
    }
}
