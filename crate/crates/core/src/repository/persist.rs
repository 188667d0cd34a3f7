//! Directory format: `<root>/<entry_id>/{plan.txt, meta.kv}`, `<root>/ORDER`
//! (one entry id per line, scan order) and `<root>/STATE` (counters and
//! read throughput).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use super::entry::{EntryId, EntryStats, Fingerprint, RepositoryEntry};
use super::policy::Throughput;
use super::{RepoError, RepoState};
use crate::plan::{parse_plan, render_plan, OpId};

pub(super) const ORDER_FILE: &str = "ORDER";
pub(super) const STATE_FILE: &str = "STATE";
pub(super) const LOCK_FILE: &str = "LOCK";
const PLAN_FILE: &str = "plan.txt";
const META_FILE: &str = "meta.kv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RepoError + '_ {
    move |source| RepoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write via a sibling temp file and rename so readers never see a torn file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), RepoError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn nanos(d: Duration) -> u128 {
    d.as_nanos()
}

pub fn render_meta(e: &RepositoryEntry) -> String {
    let mut out = String::new();
    let s = &e.stats;
    let _ = writeln!(out, "output={}", e.output_path);
    let _ = writeln!(out, "input_bytes={}", s.input_bytes);
    let _ = writeln!(out, "output_bytes={}", s.output_bytes);
    let _ = writeln!(out, "t_load={}", nanos(s.t_load));
    let ops: Vec<String> = s.t_ops.iter().map(|(id, t)| format!("{}:{}", id.0, nanos(*t))).collect();
    let _ = writeln!(out, "t_ops={}", ops.join(","));
    let _ = writeln!(out, "t_sort={}", nanos(s.t_sort));
    let _ = writeln!(out, "t_store={}", nanos(s.t_store));
    let _ = writeln!(out, "t_elapsed={}", nanos(s.t_elapsed));
    let _ = writeln!(out, "created={}", e.created_at);
    let _ = writeln!(
        out,
        "last_reused={}",
        e.last_reused_at.map(|t| t.to_string()).unwrap_or_default()
    );
    let _ = writeln!(out, "reuse_count={}", e.reuse_count);
    for (i, f) in e.input_fingerprints.iter().enumerate() {
        let _ = writeln!(out, "fingerprint.{i}={},{},{}", f.path, f.mtime, f.bytes);
    }
    let f = &e.output_fingerprint;
    let _ = writeln!(out, "output_fingerprint={},{}", f.mtime, f.bytes);
    out
}

struct MetaParser<'a> {
    file: &'a str,
    fields: BTreeMap<&'a str, (usize, &'a str)>,
}

impl<'a> MetaParser<'a> {
    fn new(file: &'a str, text: &'a str) -> Result<Self, RepoError> {
        let mut fields = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| RepoError::Malformed {
                file: file.to_string(),
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            fields.insert(k, (i + 1, v));
        }
        Ok(MetaParser { file, fields })
    }

    fn bad(&self, line: usize, message: impl Into<String>) -> RepoError {
        RepoError::Malformed {
            file: self.file.to_string(),
            line,
            message: message.into(),
        }
    }

    fn raw(&self, key: &str) -> Result<(usize, &'a str), RepoError> {
        self.fields
            .get(key)
            .copied()
            .ok_or_else(|| self.bad(0, format!("missing key '{key}'")))
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T, RepoError> {
        let (line, v) = self.raw(key)?;
        v.parse().map_err(|_| self.bad(line, format!("'{key}' is not a number")))
    }

    fn duration(&self, key: &str) -> Result<Duration, RepoError> {
        Ok(duration_from_nanos(self.num::<u128>(key)?))
    }
}

fn duration_from_nanos(n: u128) -> Duration {
    Duration::new((n / 1_000_000_000) as u64, (n % 1_000_000_000) as u32)
}

pub fn parse_meta(
    file: &str,
    id: EntryId,
    plan_text: &str,
    meta: &str,
) -> Result<RepositoryEntry, RepoError> {
    let plan = parse_plan(plan_text).map_err(|source| RepoError::Plan {
        file: file.to_string(),
        source,
    })?;
    let m = MetaParser::new(file, meta)?;
    let (ops_line, ops_text) = m.raw("t_ops")?;
    let mut t_ops = BTreeMap::new();
    for item in ops_text.split(',').filter(|s| !s.is_empty()) {
        let parsed = item
            .split_once(':')
            .and_then(|(a, b)| Some((a.parse::<u32>().ok()?, b.parse::<u128>().ok()?)));
        let (op, ns) = parsed.ok_or_else(|| m.bad(ops_line, format!("bad t_ops item '{item}'")))?;
        t_ops.insert(OpId(op), duration_from_nanos(ns));
    }
    let stats = EntryStats {
        input_bytes: m.num("input_bytes")?,
        output_bytes: m.num("output_bytes")?,
        t_load: m.duration("t_load")?,
        t_ops,
        t_sort: m.duration("t_sort")?,
        t_store: m.duration("t_store")?,
        t_elapsed: m.duration("t_elapsed")?,
    };
    let (reused_line, reused) = m.raw("last_reused")?;
    let last_reused_at = if reused.is_empty() {
        None
    } else {
        Some(reused.parse().map_err(|_| m.bad(reused_line, "'last_reused' is not a number"))?)
    };
    let mut input_fingerprints = Vec::new();
    for i in 0.. {
        let Ok((line, v)) = m.raw(&format!("fingerprint.{i}")) else { break };
        let mut it = v.rsplitn(3, ',');
        let parsed = (|| {
            let bytes = it.next()?.parse().ok()?;
            let mtime = it.next()?.parse().ok()?;
            let path = it.next()?.to_string();
            Some(Fingerprint { path, mtime, bytes })
        })();
        input_fingerprints.push(parsed.ok_or_else(|| m.bad(line, "bad fingerprint"))?);
    }
    let output_path = m.raw("output")?.1.to_string();
    let (of_line, of) = m.raw("output_fingerprint")?;
    let output_fingerprint = of
        .split_once(',')
        .and_then(|(a, b)| {
            Some(Fingerprint {
                path: output_path.clone(),
                mtime: a.parse().ok()?,
                bytes: b.parse().ok()?,
            })
        })
        .ok_or_else(|| m.bad(of_line, "bad output_fingerprint"))?;
    Ok(RepositoryEntry {
        id,
        plan,
        output_path,
        stats,
        created_at: m.num("created")?,
        last_reused_at,
        reuse_count: m.num("reuse_count")?,
        input_fingerprints,
        output_fingerprint,
    })
}

pub(super) fn load(root: &Path) -> Result<RepoState, RepoError> {
    let mut state = RepoState::default();
    let state_path = root.join(STATE_FILE);
    if state_path.exists() {
        let text = fs::read_to_string(&state_path).map_err(io_err(&state_path))?;
        let m = MetaParser::new(STATE_FILE, &text)?;
        state.next_entry = m.num("next_entry")?;
        state.next_workflow = m.num("next_workflow")?;
        state.throughput = Throughput {
            bytes: m.num("read_bytes")?,
            nanos: m.num("read_nanos")?,
        };
    }
    let order_path = root.join(ORDER_FILE);
    if !order_path.exists() {
        return Ok(state);
    }
    let order = fs::read_to_string(&order_path).map_err(io_err(&order_path))?;
    for id in order.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let dir = root.join(id);
        let plan_path = dir.join(PLAN_FILE);
        let meta_path = dir.join(META_FILE);
        let plan = fs::read_to_string(&plan_path).map_err(io_err(&plan_path))?;
        let meta = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let file = format!("{id}/{META_FILE}");
        state.entries.push(parse_meta(&file, EntryId(id.to_string()), &plan, &meta)?);
    }
    Ok(state)
}

pub(super) fn save(root: &Path, state: &RepoState) -> Result<(), RepoError> {
    for e in &state.entries {
        let dir = root.join(&e.id.0);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_atomic(&dir.join(PLAN_FILE), &render_plan(&e.plan))?;
        write_atomic(&dir.join(META_FILE), &render_meta(e))?;
    }
    let order: String = state.entries.iter().map(|e| format!("{}\n", e.id)).collect();
    write_atomic(&root.join(ORDER_FILE), &order)?;
    let st = format!(
        "next_entry={}\nnext_workflow={}\nread_bytes={}\nread_nanos={}\n",
        state.next_entry, state.next_workflow, state.throughput.bytes, state.throughput.nanos
    );
    write_atomic(&root.join(STATE_FILE), &st)?;
    // Drop directories of entries no longer listed.
    let live: std::collections::BTreeSet<&str> = state.entries.iter().map(|e| e.id.0.as_str()).collect();
    for d in fs::read_dir(root).map_err(io_err(root))?.flatten() {
        let name = d.file_name().to_string_lossy().into_owned();
        if d.path().is_dir() && is_entry_dir_name(&name) && !live.contains(name.as_str()) {
            fs::remove_dir_all(d.path()).map_err(io_err(&d.path()))?;
        }
    }
    Ok(())
}

fn is_entry_dir_name(name: &str) -> bool {
    name.strip_prefix('e').is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}
