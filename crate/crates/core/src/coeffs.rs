//! Embedding coefficients: landmark sampling plus the Nyström and
//! stable-distribution solvers, each run as a sampling map job with one reducer.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Instance, PartitionedDataset};
use crate::error::{Error, Result};
use crate::kernels::{kernel_gram, KernelSpec};
use crate::linalg::{centering_matrix, inv_sqrt_sym, inv_sqrt_top, DenseMatrix, DEFAULT_EIG_FLOOR};
use crate::mr::{task_rng, Emitter, Engine, MrJob, ShuffleReport, TaskContext};

pub const SAMPLE_JOB: u32 = 1;
pub const STABLE_ROWS_JOB: u32 = 2;
/// Resampling attempts after the first draw.
pub const MAX_RETRIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Nystrom,
    Stable,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Nystrom => "nystrom",
            Variant::Stable => "stable",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Variant::Nystrom => 0,
            Variant::Stable => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Variant::Nystrom),
            1 => Ok(Variant::Stable),
            t => Err(Error::Corrupt(format!("unknown variant tag {t}"))),
        }
    }

    /// Discrepancy the variant is defined with.
    pub fn discrepancy(self) -> Discrepancy {
        match self {
            Variant::Nystrom => Discrepancy::L2,
            Variant::Stable => Discrepancy::L1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nystrom" => Ok(Variant::Nystrom),
            "stable" => Ok(Variant::Stable),
            other => Err(Error::invalid(format!("unknown variant '{other}'"))),
        }
    }
}

/// Embedding-space surrogate for the kernel-space centroid distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discrepancy {
    L2,
    L1,
}

impl Discrepancy {
    pub fn as_str(self) -> &'static str {
        match self {
            Discrepancy::L2 => "l2",
            Discrepancy::L1 => "l1",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Discrepancy::L2 => 2,
            Discrepancy::L1 => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            2 => Ok(Discrepancy::L2),
            1 => Ok(Discrepancy::L1),
            t => Err(Error::Corrupt(format!("unknown discrepancy tag {t}"))),
        }
    }
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Discrepancy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Discrepancy::L2),
            "l1" => Ok(Discrepancy::L1),
            other => Err(Error::invalid(format!("unknown discrepancy '{other}'"))),
        }
    }
}

/// Landmark instances split into disjoint blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks {
    pub blocks: Vec<Vec<Instance>>,
}

impl Landmarks {
    pub fn new(blocks: Vec<Vec<Instance>>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(Vec::is_empty) {
            return Err(Error::invalid("landmark blocks must be non-empty"));
        }
        let mut ids: Vec<u64> = blocks.iter().flatten().map(|x| x.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("landmark blocks share an instance id"));
        }
        let d = blocks[0][0].dim();
        if let Some(x) = blocks.iter().flatten().find(|x| x.dim() != d) {
            return Err(Error::Dimension {
                expected: d,
                found: x.dim(),
            });
        }
        Ok(Landmarks { blocks })
    }

    pub fn q(&self) -> usize {
        self.blocks.len()
    }

    pub fn l_total(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn d_in(&self) -> usize {
        self.blocks[0][0].dim()
    }

    pub fn all(&self) -> impl Iterator<Item = &Instance> {
        self.blocks.iter().flatten()
    }
}

/// Block-diagonal coefficients `R` together with the landmarks they act on.
#[derive(Debug, Clone, PartialEq)]
pub struct ApncModel {
    pub variant: Variant,
    pub landmarks: Landmarks,
    /// `R^(b)`, one per landmark block; block `b` has `|L^(b)|` columns.
    pub blocks: Vec<DenseMatrix>,
    pub m_effective: usize,
    pub kernel: KernelSpec,
    pub discrepancy: Discrepancy,
    pub seed: u64,
    pub metadata: BTreeMap<String, String>,
}

impl ApncModel {
    pub fn new(
        variant: Variant,
        landmarks: Landmarks,
        blocks: Vec<DenseMatrix>,
        kernel: KernelSpec,
        discrepancy: Discrepancy,
        seed: u64,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        if blocks.len() != landmarks.q() {
            return Err(Error::Dimension {
                expected: landmarks.q(),
                found: blocks.len(),
            });
        }
        for (r, l) in blocks.iter().zip(&landmarks.blocks) {
            if r.cols() != l.len() {
                return Err(Error::Dimension {
                    expected: l.len(),
                    found: r.cols(),
                });
            }
            if r.rows() == 0 {
                return Err(Error::invalid("coefficient block with no rows"));
            }
        }
        let m_effective = blocks.iter().map(DenseMatrix::rows).sum();
        Ok(ApncModel {
            variant,
            landmarks,
            blocks,
            m_effective,
            kernel: kernel.validate()?,
            discrepancy,
            seed,
            metadata,
        })
    }

    pub fn q(&self) -> usize {
        self.blocks.len()
    }

    pub fn l(&self) -> usize {
        self.landmarks.l_total()
    }

    pub fn d_in(&self) -> usize {
        self.landmarks.d_in()
    }

    /// Row offset of each block's portion within an embedding.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.blocks
            .iter()
            .map(|r| {
                let o = at;
                at += r.rows();
                o
            })
            .collect()
    }
}

enum Attempt<T> {
    Short(usize),
    Solved(T),
}

/// Map: keep each instance with probability `l/n` and send it to key 0.
/// Reduce: hand the sample, in id order, to `solve` if it is large enough.
struct SampleJob<'a, S> {
    name: &'static str,
    p: f64,
    seed: u64,
    needed: usize,
    solve: &'a S,
}

impl<T, S> MrJob for SampleJob<'_, S>
where
    T: Send,
    S: Fn(Vec<Instance>, u64) -> Result<T> + Sync,
{
    type Input = Instance;
    type Key = u32;
    type Value = Instance;
    type Local = ();
    type State = ChaCha8Rng;
    type Output = Attempt<T>;

    fn name(&self) -> &str {
        self.name
    }

    fn job_id(&self) -> u32 {
        SAMPLE_JOB
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn setup(&self, ctx: &TaskContext) -> ChaCha8Rng {
        ctx.rng()
    }

    fn map(&self, rng: &mut ChaCha8Rng, _: u64, x: &Instance, out: &mut Emitter<u32, Instance, ()>) -> Result<()> {
        if rng.random::<f64>() < self.p {
            out.emit(0, x.clone());
        }
        Ok(())
    }

    fn reduce(&self, _: &u32, values: Vec<Instance>) -> Result<Vec<Attempt<T>>> {
        if values.len() < self.needed {
            return Ok(vec![Attempt::Short(values.len())]);
        }
        Ok(vec![Attempt::Solved((self.solve)(values, self.seed)?)])
    }
}

struct Sampled<T> {
    value: T,
    attempts: usize,
    seed: u64,
    report: ShuffleReport,
}

fn sample_and_solve<T, S>(
    engine: &Engine,
    dataset: &PartitionedDataset,
    l: usize,
    rank_need: usize,
    seed: u64,
    name: &'static str,
    solve: &S,
) -> Result<Sampled<T>>
where
    T: Send,
    S: Fn(Vec<Instance>, u64) -> Result<T> + Sync,
{
    let n = dataset.n();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if l == 0 || l > n {
        return Err(Error::invalid(format!("landmark count must be in [1, {n}], got {l}")));
    }
    let needed = l.min(2).max(l.div_ceil(2)).max(rank_need);
    if needed > n {
        return Err(Error::invalid(format!("need {needed} landmarks but the dataset has {n} instances")));
    }
    let mut report = ShuffleReport::default();
    let mut realized = 0;
    for attempt in 0..=MAX_RETRIES {
        let attempt_seed = seed.wrapping_add(attempt as u64);
        let job = SampleJob {
            name,
            p: l as f64 / n as f64,
            seed: attempt_seed,
            needed,
            solve,
        };
        let out = engine.run_job(&job, dataset).map_err(unwrap_reduce)?;
        report.merge(&out.report);
        let result = out.reduced.into_iter().next().and_then(|(_, mut v)| v.pop());
        match result {
            Some(Attempt::Solved(value)) => {
                return Ok(Sampled {
                    value,
                    attempts: attempt + 1,
                    seed: attempt_seed,
                    report,
                })
            }
            Some(Attempt::Short(r)) => realized = r,
            None => realized = 0,
        }
    }
    Err(Error::SamplingExhausted {
        realized,
        needed,
        attempts: MAX_RETRIES + 1,
    })
}

/// Domain errors raised by a solver surface unwrapped.
fn unwrap_reduce(e: Error) -> Error {
    match e {
        Error::ReduceFailed { source, .. } => *source,
        other => other,
    }
}

/// A landmark sample with its provenance.
#[derive(Debug, Clone)]
pub struct LandmarkSample {
    pub landmarks: Landmarks,
    pub attempts: usize,
    /// Seed the accepted draw used (`seed + attempts - 1`).
    pub seed: u64,
    pub report: ShuffleReport,
}

/// Bernoulli(`l/n`) sample of instances, resampled with `seed + 1, ...` while fewer
/// than `max(2, l/2)` are realized.
pub fn sample_landmarks(engine: &Engine, dataset: &PartitionedDataset, l: usize, seed: u64) -> Result<LandmarkSample> {
    let s = sample_and_solve(engine, dataset, l, 0, seed, "sample-landmarks", &|v, _| Landmarks::new(vec![v]))?;
    Ok(LandmarkSample {
        landmarks: s.value,
        attempts: s.attempts,
        seed: s.seed,
        report: s.report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NystromParams {
    pub l: usize,
    /// Requested rank; `None` uses every realized landmark.
    pub m: Option<usize>,
    pub seed: u64,
    pub eig_floor: f64,
}

impl NystromParams {
    pub fn new(l: usize, m: usize, seed: u64) -> Self {
        NystromParams {
            l,
            m: Some(m),
            seed,
            eig_floor: DEFAULT_EIG_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    pub l: usize,
    pub m: usize,
    /// Landmarks summed per row; `None` means `⌈0.4·l⌉`.
    pub t: Option<usize>,
    pub seed: u64,
    pub eig_floor: f64,
}

impl StableParams {
    pub fn new(l: usize, m: usize, seed: u64) -> Self {
        StableParams {
            l,
            m,
            t: None,
            seed,
            eig_floor: DEFAULT_EIG_FLOOR,
        }
    }

    pub fn t_or_default(&self) -> usize {
        self.t.unwrap_or_else(|| (2 * self.l).div_ceil(5))
    }
}

fn base_metadata(kernel: &KernelSpec, realized: usize, attempts: usize, eig_floor: f64) -> BTreeMap<String, String> {
    let mut md = BTreeMap::new();
    md.insert("kernel".into(), kernel.to_string());
    md.insert("l_realized".into(), realized.to_string());
    md.insert("sampling_attempts".into(), attempts.to_string());
    md.insert("eig_floor".into(), format!("{eig_floor:e}"));
    md
}

/// Nyström coefficients `R = Λ^{-1/2} V^T` from the top-`m` eigenpairs of the
/// landmark gram, dropping eigenvalues at or below the floor.
pub fn fit_nystrom(
    engine: &Engine,
    dataset: &PartitionedDataset,
    kernel: &KernelSpec,
    params: &NystromParams,
) -> Result<(ApncModel, ShuffleReport)> {
    let kernel = kernel.validate()?;
    if params.m == Some(0) {
        return Err(Error::invalid("rank m must be >= 1"));
    }
    if let Some(m) = params.m {
        if m > dataset.n() {
            return Err(Error::invalid(format!("rank m = {m} exceeds n = {}", dataset.n())));
        }
    }
    let solve = |landmarks: Vec<Instance>, _: u64| -> Result<(Vec<Instance>, DenseMatrix)> {
        let gram = kernel_gram(&kernel, &landmarks)?;
        let r = inv_sqrt_top(&gram, params.m, params.eig_floor)?;
        Ok((landmarks, r))
    };
    let s = sample_and_solve(
        engine,
        dataset,
        params.l,
        params.m.unwrap_or(0),
        params.seed,
        "nystrom-coeffs",
        &solve,
    )?;
    let (landmarks, r) = s.value;
    let mut md = base_metadata(&kernel, landmarks.len(), s.attempts, params.eig_floor);
    let requested = params.m.unwrap_or(landmarks.len());
    md.insert("m_requested".into(), requested.to_string());
    md.insert("m_effective".into(), r.rows().to_string());
    let model = ApncModel::new(
        Variant::Nystrom,
        Landmarks::new(vec![landmarks])?,
        vec![r],
        kernel,
        Discrepancy::L2,
        s.seed,
        md,
    )?;
    Ok((model, s.report))
}

/// Row scale of the stable coefficients.
///
/// Summing `t` landmarks drawn without replacement from `l` and whitening with
/// `(HKH)^{-1/2}` gives coordinates of variance `(l - t) / (l (l - 1))` times the
/// squared kernel-space norm, so rows are scaled to make that variance one.
/// With `t = l` the centred sum vanishes and only `1/√t` is applied.
pub fn stable_row_scale(l: usize, t: usize) -> f64 {
    let base = 1.0 / (t as f64).sqrt();
    if t >= l || l < 2 {
        return base;
    }
    let (l, t) = (l as f64, t as f64);
    base * (l * (l - 1.0) / (l - t)).sqrt()
}

/// Stable-distribution coefficients: each of the `m` rows sums `t` distinct
/// landmark rows of the whitening `(HKH)^{-1/2}`.
pub fn fit_stable(
    engine: &Engine,
    dataset: &PartitionedDataset,
    kernel: &KernelSpec,
    params: &StableParams,
) -> Result<(ApncModel, ShuffleReport)> {
    let kernel = kernel.validate()?;
    if params.m == 0 {
        return Err(Error::invalid("target dimensionality m must be >= 1"));
    }
    let t = params.t_or_default();
    if t == 0 || t > params.l {
        return Err(Error::invalid(format!("t must be in [1, l = {}], got {t}", params.l)));
    }
    let solve = |landmarks: Vec<Instance>, seed: u64| -> Result<(Vec<Instance>, DenseMatrix, usize)> {
        let l = landmarks.len();
        let gram = kernel_gram(&kernel, &landmarks)?;
        let h = centering_matrix(l)?;
        let centred = h.matmul(&gram)?.matmul(&h)?;
        let (w, rank) = inv_sqrt_sym(&centred, params.eig_floor)?;
        Ok((landmarks, stable_rows(&w, params.m, t, seed)?, rank))
    };
    let s = sample_and_solve(engine, dataset, params.l, t, params.seed, "stable-coeffs", &solve)?;
    let (landmarks, r, rank) = s.value;
    let mut md = base_metadata(&kernel, landmarks.len(), s.attempts, params.eig_floor);
    md.insert("t".into(), t.to_string());
    md.insert("whitening_rank".into(), rank.to_string());
    md.insert("row_scale".into(), format!("{:e}", stable_row_scale(landmarks.len(), t)));
    let model = ApncModel::new(
        Variant::Stable,
        Landmarks::new(vec![landmarks])?,
        vec![r],
        kernel,
        Discrepancy::L1,
        s.seed,
        md,
    )?;
    Ok((model, s.report))
}

/// `m` rows, each the scaled sum of `t` distinct rows of `w` (summed in
/// ascending index order).
pub fn stable_rows(w: &DenseMatrix, m: usize, t: usize, seed: u64) -> Result<DenseMatrix> {
    let l = w.rows();
    if t == 0 || t > l {
        return Err(Error::invalid(format!("t must be in [1, {l}], got {t}")));
    }
    let scale = stable_row_scale(l, t);
    let mut rng = task_rng(seed, STABLE_ROWS_JOB, 0);
    let mut r = DenseMatrix::zeros(m, w.cols());
    let mut acc = vec![0.0; w.cols()];
    for j in 0..m {
        let mut picks = index::sample(&mut rng, l, t).into_vec();
        picks.sort_unstable();
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &v in &picks {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += w.get(v, c);
            }
        }
        for (c, a) in acc.iter().enumerate() {
            r.set(j, c, scale * a);
        }
    }
    Ok(r)
}
