//! Running one MapReduce job over the local DFS.

use std::cmp::Ordering as CmpOrdering;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::dfs::{read_split, Dataset, DatasetWriter, Dfs, InputSplit, PartWriter};
use crate::plan::{MapReduceJob, OpId, OpKind};
use crate::value::{decode_row, encode_row_into, Row};

use super::eval::{RowOp, ShuffleSpec};
use super::{ExecConfig, ExecError, JobStatistics};

const BATCH: usize = 4096;

/// One shuffled record: the encoded key followed by the encoded row.
struct ShuffleRec {
    data: String,
    key_len: u32,
    slot: u32,
}

impl ShuffleRec {
    fn key(&self) -> &str {
        &self.data[..self.key_len as usize]
    }

    fn row(&self) -> &str {
        &self.data[self.key_len as usize..]
    }

    fn order(&self, other: &Self) -> CmpOrdering {
        (self.key(), self.slot, self.row()).cmp(&(other.key(), other.slot, other.row()))
    }
}

fn partition_of(key: &str, reducers: usize) -> usize {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    (h.finish() % reducers as u64) as usize
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Op(OpId),
    Shuffle(usize),
}

struct Node {
    row_op: RowOp,
    consumers: Vec<Target>,
    is_store: bool,
}

struct Compiled {
    nodes: HashMap<OpId, Node>,
    shuffle: Option<(OpId, ShuffleSpec)>,
    reducers: usize,
}

impl Compiled {
    fn new(job: &MapReduceJob, reducers: usize) -> Result<Compiled, ExecError> {
        let plan = &job.plan;
        let shuffle_id = job.shuffle_op();
        let mut nodes = HashMap::new();
        let mut shuffle = None;
        for op in plan.ops.values() {
            let inputs: Vec<_> = plan.inputs(op.id).into_iter().map(|i| &plan.op(i).schema).collect();
            let consumers = plan
                .consumers(op.id)
                .into_iter()
                .map(|(c, slot)| if Some(c) == shuffle_id { Target::Shuffle(slot) } else { Target::Op(c) })
                .collect();
            let row_op = if op.kind().is_shuffle() {
                shuffle = Some((op.id, ShuffleSpec::compile(op, &inputs)?));
                RowOp::Pass
            } else {
                RowOp::compile(op, &inputs)?
            };
            nodes.insert(
                op.id,
                Node {
                    row_op,
                    consumers,
                    is_store: op.kind() == OpKind::Store,
                },
            );
        }
        Ok(Compiled {
            nodes,
            shuffle,
            reducers: reducers.max(1),
        })
    }
}

/// Per-task state while rows are pushed through the operator graph.
struct Task<'c> {
    c: &'c Compiled,
    times: HashMap<OpId, Duration>,
    parts: HashMap<OpId, PartWriter>,
    buf: String,
    shuffle: Vec<Vec<ShuffleRec>>,
    emit_time: Duration,
}

impl<'c> Task<'c> {
    fn new(c: &'c Compiled) -> Self {
        Task {
            c,
            times: HashMap::new(),
            parts: HashMap::new(),
            buf: String::new(),
            shuffle: (0..c.reducers).map(|_| Vec::new()).collect(),
            emit_time: Duration::ZERO,
        }
    }

    fn forward(&mut self, from: OpId, batch: Vec<Row>) -> Result<(), ExecError> {
        let c = self.c;
        let consumers = &c.nodes[&from].consumers;
        let mut batch = Some(batch);
        for (i, t) in consumers.iter().enumerate() {
            let b = if i + 1 == consumers.len() {
                batch.take().unwrap_or_default()
            } else {
                batch.clone().unwrap_or_default()
            };
            match *t {
                Target::Op(id) => self.push(id, b)?,
                Target::Shuffle(slot) => self.emit(slot, b)?,
            }
        }
        Ok(())
    }

    fn push(&mut self, id: OpId, batch: Vec<Row>) -> Result<(), ExecError> {
        let c = self.c;
        let node = &c.nodes[&id];
        let t0 = Instant::now();
        if node.is_store {
            let w = self.parts.get_mut(&id).expect("store part opened for this task");
            for row in &batch {
                self.buf.clear();
                encode_row_into(&mut self.buf, row)?;
                w.write_record(&self.buf)?;
            }
            *self.times.entry(id).or_default() += t0.elapsed();
            return Ok(());
        }
        let out = node.row_op.apply(id, batch)?;
        *self.times.entry(id).or_default() += t0.elapsed();
        if out.is_empty() {
            Ok(())
        } else {
            self.forward(id, out)
        }
    }

    fn emit(&mut self, slot: usize, batch: Vec<Row>) -> Result<(), ExecError> {
        let t0 = Instant::now();
        let (_, spec) = self.c.shuffle.as_ref().expect("job has a shuffle operator");
        for row in batch {
            // Encode into the scratch buffer and keep an exact-size copy.
            self.buf.clear();
            let k = spec.encode(slot, &row, &mut self.buf)?;
            let p = partition_of(&self.buf[..k], self.c.reducers);
            self.shuffle[p].push(ShuffleRec {
                data: self.buf.clone(),
                key_len: k as u32,
                slot: slot as u32,
            });
        }
        self.emit_time += t0.elapsed();
        Ok(())
    }

    fn finish_parts(&mut self) -> Result<BTreeMap<OpId, u64>, ExecError> {
        let mut out = BTreeMap::new();
        for (id, w) in self.parts.drain() {
            let t0 = Instant::now();
            out.insert(id, w.finish()?);
            *self.times.entry(id).or_default() += t0.elapsed();
        }
        Ok(out)
    }
}

struct MapTask {
    load: OpId,
    path: String,
    arity: usize,
    split: InputSplit,
    /// Part number this task writes for each map-side Store it reaches.
    parts: Vec<(OpId, usize)>,
}

struct MapOutput {
    runs: Vec<Vec<ShuffleRec>>,
    times: HashMap<OpId, Duration>,
    load_time: Duration,
    sort_time: Duration,
    wall: Duration,
}

struct ReduceOutput {
    times: HashMap<OpId, Duration>,
    sort_time: Duration,
    wall: Duration,
}

fn open_parts(
    task: &mut Task<'_>,
    writers: &BTreeMap<OpId, DatasetWriter<'_>>,
    parts: &[(OpId, usize)],
) -> Result<(), ExecError> {
    for &(id, n) in parts {
        task.parts.insert(id, writers[&id].part(n)?);
    }
    Ok(())
}

fn run_map_task(
    c: &Compiled,
    writers: &BTreeMap<OpId, DatasetWriter<'_>>,
    mt: &MapTask,
) -> Result<MapOutput, ExecError> {
    let start = Instant::now();
    let mut task = Task::new(c);
    open_parts(&mut task, writers, &mt.parts)?;
    let t0 = Instant::now();
    let mut text = String::new();
    read_split(&mt.split, &mut text).map_err(|source| ExecError::Read {
        path: mt.path.clone(),
        source,
    })?;
    let mut load_time = t0.elapsed();
    let mut lines = text.lines().peekable();
    while lines.peek().is_some() {
        let t0 = Instant::now();
        let batch = lines
            .by_ref()
            .take(BATCH)
            .map(|l| decode_row(l, mt.arity))
            .collect::<Result<Vec<Row>, _>>()
            .map_err(|source| ExecError::Decode {
                path: mt.path.clone(),
                source,
            })?;
        load_time += t0.elapsed();
        task.forward(mt.load, batch)?;
    }
    let t0 = Instant::now();
    for run in &mut task.shuffle {
        run.sort_unstable_by(ShuffleRec::order);
    }
    let sort_time = task.emit_time + t0.elapsed();
    task.finish_parts()?;
    Ok(MapOutput {
        runs: std::mem::take(&mut task.shuffle),
        times: task.times,
        load_time,
        sort_time,
        wall: start.elapsed(),
    })
}

struct HeapItem<'a> {
    rec: &'a ShuffleRec,
    run: usize,
    pos: usize,
}

impl PartialEq for HeapItem<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == CmpOrdering::Equal
    }
}

impl Eq for HeapItem<'_> {}

impl PartialOrd for HeapItem<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem<'_> {
    // Reversed so that BinaryHeap pops the smallest record.
    fn cmp(&self, other: &Self) -> CmpOrdering {
        other.rec.order(self.rec).then(other.run.cmp(&self.run))
    }
}

fn run_reduce_task(
    c: &Compiled,
    writers: &BTreeMap<OpId, DatasetWriter<'_>>,
    parts: &[(OpId, usize)],
    runs: &[&[ShuffleRec]],
) -> Result<ReduceOutput, ExecError> {
    let start = Instant::now();
    let (shuffle_id, spec) = c.shuffle.as_ref().expect("reduce task without shuffle");
    let mut task = Task::new(c);
    open_parts(&mut task, writers, parts)?;

    let mut heap: BinaryHeap<HeapItem<'_>> = runs
        .iter()
        .enumerate()
        .filter_map(|(run, r)| r.first().map(|rec| HeapItem { rec, run, pos: 0 }))
        .collect();
    let mut pending: Vec<Row> = Vec::new();
    let mut key: Option<&str> = None;
    let mut per_slot: Vec<Vec<&str>> = vec![Vec::new(); spec.arity.len()];
    let mut combine_time = Duration::ZERO;
    let mut downstream = Duration::ZERO;

    let mut flush_group = |key: &str,
                           per_slot: &mut Vec<Vec<&str>>,
                           pending: &mut Vec<Row>,
                           task: &mut Task<'_>|
     -> Result<(), ExecError> {
        let t0 = Instant::now();
        spec.combine(key, per_slot, pending)?;
        per_slot.iter_mut().for_each(Vec::clear);
        combine_time += t0.elapsed();
        if pending.len() >= BATCH {
            let t0 = Instant::now();
            task.forward(*shuffle_id, std::mem::take(pending))?;
            downstream += t0.elapsed();
        }
        Ok(())
    };

    while let Some(item) = heap.pop() {
        let rec = item.rec;
        if key.is_some_and(|k| k != rec.key()) {
            flush_group(key.unwrap(), &mut per_slot, &mut pending, &mut task)?;
        }
        key = Some(rec.key());
        per_slot[rec.slot as usize].push(rec.row());
        let next = item.pos + 1;
        if let Some(rec) = runs[item.run].get(next) {
            heap.push(HeapItem {
                rec,
                run: item.run,
                pos: next,
            });
        }
    }
    if let Some(k) = key {
        flush_group(k, &mut per_slot, &mut pending, &mut task)?;
    }
    if !pending.is_empty() {
        let t0 = Instant::now();
        task.forward(*shuffle_id, pending)?;
        downstream += t0.elapsed();
    }
    let t0 = Instant::now();
    task.finish_parts()?;
    downstream += t0.elapsed();
    *task.times.entry(*shuffle_id).or_default() += combine_time;
    let wall = start.elapsed();
    Ok(ReduceOutput {
        sort_time: wall.saturating_sub(combine_time + downstream),
        times: task.times,
        wall,
    })
}

/// Run `f(0..n)` on up to `parallelism` threads, stopping at the first error.
pub(crate) fn run_parallel<T, F>(n: usize, parallelism: usize, f: F) -> Result<Vec<T>, ExecError>
where
    T: Send,
    F: Fn(usize) -> Result<T, ExecError> + Sync,
{
    if parallelism <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    let error: Mutex<Option<ExecError>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..parallelism.min(n) {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                match f(i) {
                    Ok(v) => results.lock().unwrap()[i] = Some(v),
                    Err(e) => {
                        failed.store(true, Ordering::Relaxed);
                        error.lock().unwrap().get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(results.into_inner().unwrap().into_iter().map(|r| r.expect("task ran")).collect())
}

/// Scale `parts` down proportionally so they sum to at most `wall`.
fn clamp_to(wall: Duration, parts: &mut [&mut Duration]) {
    let sum: Duration = parts.iter().map(|d| **d).sum();
    if sum > wall && !sum.is_zero() {
        let f = wall.as_secs_f64() / sum.as_secs_f64();
        for d in parts.iter_mut() {
            **d = d.mul_f64(f);
        }
    }
}

/// Execute one job: every Store's output becomes visible only if the whole
/// job succeeds.
pub fn execute_job(dfs: &Dfs, job: &MapReduceJob, cfg: &ExecConfig) -> Result<JobStatistics, ExecError> {
    let start = Instant::now();
    let plan = &job.plan;
    plan.validate()?;
    let compiled = Compiled::new(job, cfg.reducers)?;

    let mut leases = Vec::new();
    let mut inputs: BTreeMap<OpId, Dataset> = BTreeMap::new();
    for id in plan.loads() {
        let path = plan.op(id).path().unwrap_or_default();
        leases.push(dfs.lease_read(path)?);
        let ds = dfs.metadata(path).map_err(|e| match e {
            crate::dfs::DfsError::NotFound(p) => ExecError::MissingInput(p),
            e => e.into(),
        })?;
        inputs.insert(id, ds);
    }
    let mut writers: BTreeMap<OpId, DatasetWriter<'_>> = BTreeMap::new();
    for id in plan.stores() {
        let path = plan.op(id).path().unwrap_or_default();
        let w = dfs.create(path, cfg.overwrite).map_err(|e| match e {
            crate::dfs::DfsError::AlreadyExists(p) => ExecError::OutputExists(p),
            e => e.into(),
        })?;
        writers.insert(id, w);
    }

    let reduce_ops = job.reduce_ops();
    let mut map_tasks = Vec::new();
    let mut part_counts: BTreeMap<OpId, usize> = BTreeMap::new();
    for (&load, ds) in &inputs {
        let reach: Vec<OpId> = plan
            .descendants(load)
            .into_iter()
            .filter(|d| writers.contains_key(d) && !reduce_ops.contains(d))
            .collect();
        for split in dfs.splits(ds, cfg.chunk_size)? {
            let parts = reach
                .iter()
                .map(|&s| {
                    let n = part_counts.entry(s).or_default();
                    *n += 1;
                    (s, *n - 1)
                })
                .collect();
            map_tasks.push(MapTask {
                load,
                path: ds.path.clone(),
                arity: plan.op(load).schema.len(),
                split,
                parts,
            });
        }
    }

    let map_start = Instant::now();
    let mut maps = run_parallel(map_tasks.len(), cfg.parallelism, |i| {
        run_map_task(&compiled, &writers, &map_tasks[i])
    })?;
    let map_wall = map_start.elapsed();

    let mut reduces = Vec::new();
    let mut reduce_wall = Duration::ZERO;
    if compiled.shuffle.is_some() {
        let reduce_stores: Vec<OpId> = writers.keys().filter(|s| reduce_ops.contains(s)).copied().collect();
        let reduce_start = Instant::now();
        reduces = run_parallel(compiled.reducers, cfg.parallelism, |p| {
            let runs: Vec<&[ShuffleRec]> = maps.iter().map(|m| m.runs[p].as_slice()).collect();
            let parts: Vec<(OpId, usize)> = reduce_stores.iter().map(|&s| (s, p)).collect();
            run_reduce_task(&compiled, &writers, &parts, &runs)
        })?;
        reduce_wall = reduce_start.elapsed();
        for &s in &reduce_stores {
            part_counts.insert(s, compiled.reducers);
        }
    }
    for m in &mut maps {
        m.runs = Vec::new();
    }

    let commit_start = Instant::now();
    for (&id, w) in &writers {
        if part_counts.get(&id).copied().unwrap_or(0) == 0 {
            w.part(0)?.finish()?;
        }
    }
    let mut store_bytes = BTreeMap::new();
    for (id, w) in writers {
        let ds = w.commit(Some(&plan.op(id).schema))?;
        store_bytes.insert(id, ds.byte_size);
    }
    let commit_time = commit_start.elapsed();
    drop(leases);

    let mut stats = JobStatistics {
        job_id: job.id.clone(),
        input_bytes: inputs.values().map(|d| d.byte_size).sum(),
        map_tasks: maps.len(),
        reduce_tasks: reduces.len(),
        ..Default::default()
    };
    for id in inputs.keys() {
        stats.load_bytes.insert(*id, inputs[id].byte_size);
        stats.load_times.insert(*id, Duration::ZERO);
    }

    let mut map_sort = Duration::ZERO;
    let mut map_times: BTreeMap<OpId, Duration> = BTreeMap::new();
    for (m, mt) in maps.iter().zip(&map_tasks) {
        *stats.load_times.get_mut(&mt.load).unwrap() += m.load_time;
        map_sort += m.sort_time;
        for (id, t) in &m.times {
            *map_times.entry(*id).or_default() += *t;
        }
    }
    {
        let mut parts: Vec<&mut Duration> = stats.load_times.values_mut().collect();
        parts.extend(map_times.values_mut());
        parts.push(&mut map_sort);
        clamp_to(map_wall, &mut parts);
    }
    let mut reduce_sort = Duration::ZERO;
    let mut reduce_times: BTreeMap<OpId, Duration> = BTreeMap::new();
    for r in &reduces {
        reduce_sort += r.sort_time;
        for (id, t) in &r.times {
            *reduce_times.entry(*id).or_default() += *t;
        }
    }
    {
        let mut parts: Vec<&mut Duration> = reduce_times.values_mut().collect();
        parts.push(&mut reduce_sort);
        clamp_to(reduce_wall, &mut parts);
    }
    for (id, t) in map_times.into_iter().chain(reduce_times) {
        if plan.op(id).kind() == OpKind::Store {
            *stats.store_times.entry(id).or_default() += t;
        } else {
            *stats.t_ops.entry(id).or_default() += t;
        }
    }
    for &id in store_bytes.keys() {
        stats.store_times.entry(id).or_default();
    }
    // Commit cost belongs to the Stores, split by the bytes each wrote.
    let total_out: u64 = store_bytes.values().sum();
    for (id, b) in &store_bytes {
        let share = if total_out == 0 {
            1.0 / store_bytes.len() as f64
        } else {
            *b as f64 / total_out as f64
        };
        *stats.store_times.get_mut(id).unwrap() += commit_time.mul_f64(share);
    }
    stats.t_load = stats.load_times.values().sum();
    stats.t_store = stats.store_times.values().sum();
    stats.t_sort = map_sort + reduce_sort;
    stats.output_bytes = plan
        .stores()
        .into_iter()
        .find(|s| plan.op(*s).path() == Some(job.output_path.as_str()))
        .and_then(|s| store_bytes.get(&s).copied())
        .unwrap_or(0);
    stats.store_bytes = store_bytes;
    if !maps.is_empty() {
        stats.mapper_avg = maps.iter().map(|m| m.wall).sum::<Duration>() / maps.len() as u32;
    }
    if !reduces.is_empty() {
        stats.reducer_avg = reduces.iter().map(|r| r.wall).sum::<Duration>() / reduces.len() as u32;
    }
    stats.t_elapsed = start.elapsed().max(stats.phase_sum());
    Ok(stats)
}
