//! In-process map/reduce engine.
//!
//! Jobs see one block of records per map task, may keep task-private state between
//! records (in-mapper combining), and emit either shuffled `(key, value)` pairs or
//! task-local records that never leave the task's partition. Shuffled pairs are
//! metered at emit time, grouped by key in ascending order, and each key is
//! reduced independently. Values for a key arrive ordered by (source block,
//! emission order), so results do not depend on how many worker threads run.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::hash::{DefaultHasher, Hasher};
use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::block_ranges;
use crate::error::{Error, Result};

/// Fixed-layout byte encoding used for shuffle metering and side-data sealing.
///
/// Floats are 8 bytes, `u32` keys 4 bytes; vectors carry no length prefix.
pub trait Wire {
    fn wire_size(&self) -> usize;
    fn encode(&self, out: &mut Vec<u8>);
}

impl Wire for u32 {
    fn wire_size(&self) -> usize {
        4
    }
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Wire for u64 {
    fn wire_size(&self) -> usize {
        8
    }
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Wire for f64 {
    fn wire_size(&self) -> usize {
        8
    }
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Wire for [f64] {
    fn wire_size(&self) -> usize {
        8 * self.len()
    }
    fn encode(&self, out: &mut Vec<u8>) {
        for x in self {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

impl Wire for Vec<f64> {
    fn wire_size(&self) -> usize {
        self.as_slice().wire_size()
    }
    fn encode(&self, out: &mut Vec<u8>) {
        self.as_slice().encode(out)
    }
}

/// Strings carry a 4-byte length prefix.
impl Wire for String {
    fn wire_size(&self) -> usize {
        4 + self.len()
    }
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(self.as_bytes());
    }
}

impl<A: Wire, B: Wire> Wire for (A, B) {
    fn wire_size(&self) -> usize {
        self.0.wire_size() + self.1.wire_size()
    }
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
        self.1.encode(out);
    }
}

/// Blocks of records as seen by map tasks.
pub trait JobInput: Sync {
    type Record: ?Sized + Sync;

    fn block_count(&self) -> usize;
    /// `(record id, record)` pairs of block `b`, in id order.
    fn block(&self, b: usize) -> Vec<(u64, &Self::Record)>;
}

/// Generic keyed record blocks; the input and output type of [`Engine::run_chain`].
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedBlocks<R> {
    pub blocks: Vec<Vec<(u64, R)>>,
}

impl<R> KeyedBlocks<R> {
    pub fn new(blocks: Vec<Vec<(u64, R)>>) -> Self {
        KeyedBlocks { blocks }
    }

    /// Splits id-ordered records into `partitions` contiguous blocks.
    pub fn partitioned(records: Vec<(u64, R)>, partitions: usize) -> Self {
        let ranges = block_ranges(records.len(), partitions);
        let mut iter = records.into_iter();
        let blocks = ranges
            .iter()
            .map(|r| iter.by_ref().take(r.len()).collect())
            .collect();
        KeyedBlocks { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_records(self) -> Vec<(u64, R)> {
        self.blocks.into_iter().flatten().collect()
    }
}

impl<R: Sync> JobInput for KeyedBlocks<R> {
    type Record = R;

    fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn block(&self, b: usize) -> Vec<(u64, &R)> {
        self.blocks[b].iter().map(|(id, r)| (*id, r)).collect()
    }
}

/// Counter-based stream: a ChaCha generator keyed by the global seed whose stream
/// number is `(job_id << 32) | task`.
pub fn task_rng(seed: u64, job_id: u32, task: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((job_id as u64) << 32) | task as u64);
    rng
}

#[derive(Debug, Clone, Copy)]
pub struct TaskContext {
    pub job_id: u32,
    pub task_id: usize,
    pub seed: u64,
}

impl TaskContext {
    pub fn rng(&self) -> ChaCha8Rng {
        task_rng(self.seed, self.job_id, self.task_id as u32)
    }
}

/// Collects one map task's output.
pub struct Emitter<K, V, L> {
    pairs: Vec<(K, V)>,
    local: Vec<L>,
    bytes: u64,
}

impl<K: Wire, V: Wire, L> Emitter<K, V, L> {
    fn new() -> Self {
        Emitter {
            pairs: Vec::new(),
            local: Vec::new(),
            bytes: 0,
        }
    }

    /// Sends a pair through the shuffle.
    pub fn emit(&mut self, key: K, value: V) {
        self.bytes += (key.wire_size() + value.wire_size()) as u64;
        self.pairs.push((key, value));
    }

    /// Keeps a record in this task's local output partition; not shuffled.
    pub fn emit_local(&mut self, record: L) {
        self.local.push(record);
    }
}

/// Read-only data every map task loads (models, centroids).
pub trait Sealed: Sync {
    fn bytes(&self) -> u64;
    fn intact(&self) -> bool;
}

/// Wraps side data; debug builds fingerprint the encoding at seal time so the
/// engine can detect mutation through interior mutability.
#[derive(Debug)]
pub struct SideData<T> {
    value: T,
    bytes: u64,
    #[cfg(debug_assertions)]
    fingerprint: u64,
}

fn fingerprint<T: Wire + ?Sized>(value: &T) -> (u64, u64) {
    let mut buf = Vec::with_capacity(value.wire_size());
    value.encode(&mut buf);
    let mut h = DefaultHasher::new();
    h.write(&buf);
    (buf.len() as u64, h.finish())
}

impl<T: Wire> SideData<T> {
    pub fn seal(value: T) -> Self {
        #[cfg(debug_assertions)]
        {
            let (bytes, fingerprint) = fingerprint(&value);
            SideData {
                value,
                bytes,
                fingerprint,
            }
        }
        #[cfg(not(debug_assertions))]
        {
            let bytes = value.wire_size() as u64;
            SideData { value, bytes }
        }
    }

    pub fn into_inner(self) -> T {
        self.value
    }
}

impl<T> Deref for SideData<T> {
    type Target = T;
    fn deref(&self) -> &T {
        &self.value
    }
}

impl<T: Wire + Sync> Sealed for SideData<T> {
    fn bytes(&self) -> u64 {
        self.bytes
    }

    fn intact(&self) -> bool {
        #[cfg(debug_assertions)]
        {
            fingerprint(&self.value).1 == self.fingerprint
        }
        #[cfg(not(debug_assertions))]
        {
            true
        }
    }
}

/// Cost accounting for one job (or a sum of jobs).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleReport {
    pub bytes_shuffled: u64,
    pub records_shuffled: u64,
    pub map_tasks: u64,
    pub reduce_tasks: u64,
    pub peak_side_data_bytes: u64,
}

impl ShuffleReport {
    /// Sums traffic and task counts; keeps the larger side-data peak.
    pub fn merge(&mut self, other: &ShuffleReport) {
        self.bytes_shuffled += other.bytes_shuffled;
        self.records_shuffled += other.records_shuffled;
        self.map_tasks += other.map_tasks;
        self.reduce_tasks += other.reduce_tasks;
        self.peak_side_data_bytes = self.peak_side_data_bytes.max(other.peak_side_data_bytes);
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// A map/reduce job.
///
/// `setup`/`map`/`cleanup` run once per map task over that task's block only.
/// `reduce` sees every value for one key and nothing else.
pub trait MrJob: Sync {
    type Input: ?Sized + Sync;
    type Key: Ord + Wire + Send + Sync + Debug;
    type Value: Wire + Send;
    type Local: Send;
    type State: Send;
    type Output: Send;

    fn name(&self) -> &str;

    /// Stream namespace for [`TaskContext::rng`].
    fn job_id(&self) -> u32 {
        0
    }

    fn seed(&self) -> u64 {
        0
    }

    fn side_data(&self) -> Vec<&dyn Sealed> {
        Vec::new()
    }

    fn setup(&self, ctx: &TaskContext) -> Self::State;

    fn map(
        &self,
        state: &mut Self::State,
        id: u64,
        record: &Self::Input,
        out: &mut Emitter<Self::Key, Self::Value, Self::Local>,
    ) -> Result<()>;

    fn cleanup(
        &self,
        _state: Self::State,
        _out: &mut Emitter<Self::Key, Self::Value, Self::Local>,
    ) -> Result<()> {
        Ok(())
    }

    fn reduce(&self, key: &Self::Key, values: Vec<Self::Value>) -> Result<Vec<Self::Output>>;
}

pub struct JobOutput<K, O, L> {
    /// Reduce outputs in ascending key order.
    pub reduced: Vec<(K, Vec<O>)>,
    /// Task-local records, one list per map task in block order.
    pub local: Vec<Vec<L>>,
    pub report: ShuffleReport,
}

type JobOutputOf<J> = JobOutput<<J as MrJob>::Key, <J as MrJob>::Output, <J as MrJob>::Local>;

type TaskResultOf<J> = TaskResult<<J as MrJob>::Key, <J as MrJob>::Value, <J as MrJob>::Local>;
type ReducedOf<J> = (<J as MrJob>::Key, Vec<<J as MrJob>::Output>);

struct TaskResult<K, V, L> {
    pairs: Vec<(K, V)>,
    local: Vec<L>,
    bytes: u64,
}

/// Runs jobs on a fixed-size worker pool.
pub struct Engine {
    pool: rayon::ThreadPool,
    parallelism: usize,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

impl Engine {
    pub fn new(parallelism: usize) -> Result<Self> {
        if parallelism == 0 {
            return Err(Error::invalid("parallelism must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?;
        Ok(Engine { pool, parallelism })
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn run_job<J, I>(&self, job: &J, input: &I) -> Result<JobOutputOf<J>>
    where
        J: MrJob,
        I: JobInput<Record = J::Input> + ?Sized,
    {
        let blocks = input.block_count();
        let side = job.side_data();
        let peak_side_data_bytes = side.iter().map(|s| s.bytes()).sum();

        let tasks: Vec<Result<TaskResultOf<J>>> = self.pool.install(|| {
            (0..blocks)
                .into_par_iter()
                .map(|b| run_map_task(job, input, b))
                .collect()
        });

        if side.iter().any(|s| !s.intact()) {
            return Err(Error::SideDataMutated(job.name().to_string()));
        }

        let mut report = ShuffleReport {
            map_tasks: blocks as u64,
            peak_side_data_bytes,
            ..ShuffleReport::default()
        };
        let mut groups: BTreeMap<J::Key, Vec<J::Value>> = BTreeMap::new();
        let mut local = Vec::with_capacity(blocks);
        for task in tasks {
            let task = task?;
            report.bytes_shuffled += task.bytes;
            report.records_shuffled += task.pairs.len() as u64;
            for (k, v) in task.pairs {
                groups.entry(k).or_default().push(v);
            }
            local.push(task.local);
        }
        report.reduce_tasks = groups.len() as u64;

        let grouped: Vec<(J::Key, Vec<J::Value>)> = groups.into_iter().collect();
        let reduced: Vec<Result<ReducedOf<J>>> = self.pool.install(|| {
            grouped
                .into_par_iter()
                .map(|(k, vs)| match job.reduce(&k, vs) {
                    Ok(out) => Ok((k, out)),
                    Err(e) => Err(Error::ReduceFailed {
                        job: job.name().to_string(),
                        key: format!("{k:?}"),
                        source: Box::new(e),
                    }),
                })
                .collect()
        });
        let reduced = reduced.into_iter().collect::<Result<Vec<_>>>()?;

        Ok(JobOutput {
            reduced,
            local,
            report,
        })
    }

    /// Runs stages in order, feeding each stage's output to the next.
    ///
    /// Local records stay in their task's partition; reduced records are
    /// re-partitioned by contiguous ranges of ascending keys into as many
    /// partitions as the stage's input had, appended after that partition's
    /// local records.
    pub fn run_chain<R>(
        &self,
        stages: &[&dyn ChainStage<R>],
        input: KeyedBlocks<R>,
    ) -> Result<(KeyedBlocks<R>, Vec<ShuffleReport>)> {
        let mut current = input;
        let mut reports = Vec::with_capacity(stages.len());
        for stage in stages {
            let (next, report) = stage.run_stage(self, &current)?;
            current = next;
            reports.push(report);
        }
        Ok((current, reports))
    }
}

fn run_map_task<J, I>(job: &J, input: &I, b: usize) -> Result<TaskResult<J::Key, J::Value, J::Local>>
where
    J: MrJob,
    I: JobInput<Record = J::Input> + ?Sized,
{
    let ctx = TaskContext {
        job_id: job.job_id(),
        task_id: b,
        seed: job.seed(),
    };
    let records = input.block(b);
    let mut out = Emitter::new();
    let mut state = job.setup(&ctx);
    let wrap = |record: u64, e: Error| Error::MapFailed {
        job: job.name().to_string(),
        record,
        source: Box::new(e),
    };
    let mut last = None;
    for (id, record) in records {
        job.map(&mut state, id, record, &mut out)
            .map_err(|e| wrap(id, e))?;
        last = Some(id);
    }
    job.cleanup(state, &mut out)
        .map_err(|e| wrap(last.unwrap_or(0), e))?;
    Ok(TaskResult {
        pairs: out.pairs,
        local: out.local,
        bytes: out.bytes,
    })
}

/// One step of a job chain over homogeneous keyed records.
pub trait ChainStage<R>: Sync {
    fn run_stage(&self, engine: &Engine, input: &KeyedBlocks<R>) -> Result<(KeyedBlocks<R>, ShuffleReport)>;
}

impl<R, J> ChainStage<R> for J
where
    R: Send + Sync,
    J: MrJob<Input = R, Local = (u64, R), Output = (u64, R)>,
{
    fn run_stage(&self, engine: &Engine, input: &KeyedBlocks<R>) -> Result<(KeyedBlocks<R>, ShuffleReport)> {
        let out = engine.run_job(self, input)?;
        let mut blocks = out.local;
        if blocks.is_empty() {
            blocks.push(Vec::new());
        }
        let ranges = block_ranges(out.reduced.len(), blocks.len());
        let mut reduced = out.reduced.into_iter();
        for (p, range) in ranges.iter().enumerate() {
            for (_, records) in reduced.by_ref().take(range.len()) {
                blocks[p].extend(records);
            }
        }
        Ok((KeyedBlocks::new(blocks), out.report))
    }
}
