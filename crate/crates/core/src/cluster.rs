//! Lloyd iterations over embeddings: map-side nearest-centroid assignment with
//! in-mapper `(Z, g)` aggregation, reduce-side centroid means.

use rand::seq::index;
use serde::Serialize;

use crate::coeffs::Discrepancy;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::mr::{task_rng, Emitter, Engine, MrJob, Sealed, ShuffleReport, SideData, TaskContext, Wire};

pub const INIT_JOB: u32 = 3;
pub const DEFAULT_MAX_ITERS: usize = 20;

pub fn discrepancy(y: &[f64], c: &[f64], tag: Discrepancy) -> Result<f64> {
    if y.len() != c.len() {
        return Err(Error::Dimension {
            expected: c.len(),
            found: y.len(),
        });
    }
    Ok(match tag {
        Discrepancy::L2 => squared_l2(y, c).sqrt(),
        Discrepancy::L1 => y.iter().zip(c).map(|(a, b)| (a - b).abs()).sum(),
    })
}

fn squared_l2(y: &[f64], c: &[f64]) -> f64 {
    y.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Quantity minimized by assignment: squared distance under l2 (same argmin
/// as the norm), the l1 norm itself under l1.
fn assignment_cost(y: &[f64], c: &[f64], tag: Discrepancy) -> f64 {
    match tag {
        Discrepancy::L2 => squared_l2(y, c),
        Discrepancy::L1 => y.iter().zip(c).map(|(a, b)| (a - b).abs()).sum(),
    }
}

/// Index of the smallest cost; ties go to the lowest index.
pub fn argmin(costs: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, d) in costs.into_iter().enumerate() {
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Initialization, iteration cap and stopping rule shared by the embedding
/// clusterer and the exact kernel k-means oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LloydPolicy {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl LloydPolicy {
    pub fn new(k: usize, seed: u64) -> Self {
        LloydPolicy {
            k,
            max_iters: DEFAULT_MAX_ITERS,
            seed,
        }
    }

    /// `k` distinct ids drawn uniformly without replacement; cluster `c` starts
    /// at the `c`-th draw.
    pub fn initial_ids(&self, n: usize) -> Result<Vec<usize>> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.k > n {
            return Err(Error::invalid(format!("k = {} exceeds n = {n}", self.k)));
        }
        let mut rng = task_rng(self.seed, INIT_JOB, 0);
        Ok(index::sample(&mut rng, n, self.k).into_vec())
    }
}

/// Picks re-seed points for empty clusters: the points farthest from their
/// assigned centroid, ties to the lowest id, one distinct point per empty
/// cluster in ascending cluster order.
pub fn farthest_points(dist: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    /// `m × k`, one column per cluster.
    pub centroids: DenseMatrix,
    pub iteration: usize,
}

impl CentroidSet {
    pub fn k(&self) -> usize {
        self.centroids.cols()
    }

    pub fn m(&self) -> usize {
        self.centroids.rows()
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        self.centroids.column(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub labels: Vec<u32>,
}

impl Assignment {
    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut g = vec![0; k];
        for &c in &self.labels {
            g[c as usize] += 1;
        }
        g
    }
}

/// Instance embeddings at the chosen ids.
pub fn init_centroids(y: &EmbeddingMatrix, k: usize, seed: u64) -> Result<CentroidSet> {
    centroids_from_ids(y, &LloydPolicy::new(k, seed).initial_ids(y.n())?)
}

pub fn centroids_from_ids(y: &EmbeddingMatrix, ids: &[usize]) -> Result<CentroidSet> {
    let data: Vec<f64> = ids.iter().flat_map(|&i| y.column(i).iter().copied()).collect();
    Ok(CentroidSet {
        centroids: DenseMatrix::from_col_major(y.m(), ids.len(), data)?,
        iteration: 0,
    })
}

/// One cluster's slice of a task's local aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct Partial {
    pub z: Vec<f64>,
    pub g: f64,
}

impl Wire for Partial {
    fn wire_size(&self) -> usize {
        8 * (self.z.len() + 1)
    }
    fn encode(&self, out: &mut Vec<u8>) {
        self.z.encode(out);
        self.g.encode(out);
    }
}

struct Centroids(DenseMatrix);

impl Wire for Centroids {
    fn wire_size(&self) -> usize {
        8 * self.0.data().len()
    }
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.data().encode(out)
    }
}

pub struct LocalAggregate {
    /// `m × k` column sums.
    pub z: Vec<f64>,
    pub g: Vec<u64>,
}

/// Task-local `(id, cluster, cost)`.
type Placed = (u64, u32, f64);

struct AssignJob {
    tag: Discrepancy,
    centroids: SideData<Centroids>,
}

impl MrJob for AssignJob {
    type Input = [f64];
    type Key = u32;
    type Value = Partial;
    type Local = Placed;
    type State = LocalAggregate;
    type Output = Option<Vec<f64>>;

    fn name(&self) -> &str {
        "cluster-assign"
    }

    fn side_data(&self) -> Vec<&dyn Sealed> {
        vec![&self.centroids]
    }

    fn setup(&self, _: &TaskContext) -> LocalAggregate {
        let c = &self.centroids.0;
        LocalAggregate {
            z: vec![0.0; c.rows() * c.cols()],
            g: vec![0; c.cols()],
        }
    }

    fn map(&self, agg: &mut LocalAggregate, id: u64, y: &[f64], out: &mut Emitter<u32, Partial, Placed>) -> Result<()> {
        let c = &self.centroids.0;
        let m = c.rows();
        if y.len() != m {
            return Err(Error::Dimension { expected: m, found: y.len() });
        }
        let (best, cost) = argmin((0..c.cols()).map(|j| assignment_cost(y, c.column(j), self.tag)));
        for (z, v) in agg.z[best * m..(best + 1) * m].iter_mut().zip(y) {
            *z += v;
        }
        agg.g[best] += 1;
        out.emit_local((id, best as u32, cost));
        Ok(())
    }

    fn cleanup(&self, agg: LocalAggregate, out: &mut Emitter<u32, Partial, Placed>) -> Result<()> {
        let m = self.centroids.0.rows();
        for (c, &g) in agg.g.iter().enumerate() {
            out.emit(
                c as u32,
                Partial {
                    z: agg.z[c * m..(c + 1) * m].to_vec(),
                    g: g as f64,
                },
            );
        }
        Ok(())
    }

    fn reduce(&self, _: &u32, values: Vec<Partial>) -> Result<Vec<Option<Vec<f64>>>> {
        let m = self.centroids.0.rows();
        let mut z = vec![0.0; m];
        let mut g = 0.0;
        for p in values {
            for (a, b) in z.iter_mut().zip(&p.z) {
                *a += b;
            }
            g += p.g;
        }
        if g == 0.0 {
            return Ok(vec![None]);
        }
        Ok(vec![Some(z.into_iter().map(|s| s / g).collect())])
    }
}

/// Map: distance of each point to its cluster's updated centroid; each task
/// sends its `need` farthest to key 0. Reduce: global farthest.
struct FarthestJob<'a> {
    tag: Discrepancy,
    need: usize,
    labels: &'a [u32],
    centroids: SideData<Centroids>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    id: u64,
    dist: f64,
}

impl Wire for Candidate {
    fn wire_size(&self) -> usize {
        12
    }
    fn encode(&self, out: &mut Vec<u8>) {
        (self.id as u32).encode(out);
        self.dist.encode(out);
    }
}

impl MrJob for FarthestJob<'_> {
    type Input = [f64];
    type Key = u32;
    type Value = Candidate;
    type Local = ();
    type State = Vec<Candidate>;
    type Output = u64;

    fn name(&self) -> &str {
        "cluster-reseed"
    }

    fn side_data(&self) -> Vec<&dyn Sealed> {
        vec![&self.centroids]
    }

    fn setup(&self, _: &TaskContext) -> Vec<Candidate> {
        Vec::new()
    }

    fn map(&self, cands: &mut Vec<Candidate>, id: u64, y: &[f64], _: &mut Emitter<u32, Candidate, ()>) -> Result<()> {
        let c = self.labels[id as usize] as usize;
        let dist = discrepancy(y, self.centroids.0.column(c), self.tag)?;
        cands.push(Candidate { id, dist });
        Ok(())
    }

    fn cleanup(&self, cands: Vec<Candidate>, out: &mut Emitter<u32, Candidate, ()>) -> Result<()> {
        let dist: Vec<f64> = cands.iter().map(|c| c.dist).collect();
        for i in farthest_points(&dist, self.need) {
            out.emit(0, cands[i]);
        }
        Ok(())
    }

    fn reduce(&self, _: &u32, values: Vec<Candidate>) -> Result<Vec<u64>> {
        let mut values = values;
        values.sort_by(|a, b| b.dist.total_cmp(&a.dist).then(a.id.cmp(&b.id)));
        Ok(values.iter().take(self.need).map(|c| c.id).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub centroids: CentroidSet,
    pub assignment: Assignment,
    /// Under l2, squared distances; under l1, l1 distances. Measured against the
    /// centroids the assignment was made with.
    pub objective: f64,
    /// Clusters that came out empty and were re-seeded.
    pub reseeded: usize,
    pub report: ShuffleReport,
}

/// One assignment + update round.
pub fn cluster_iterate(engine: &Engine, y: &EmbeddingMatrix, centroids: &CentroidSet, tag: Discrepancy) -> Result<IterationOutcome> {
    if centroids.m() != y.m() {
        return Err(Error::Dimension {
            expected: y.m(),
            found: centroids.m(),
        });
    }
    let k = centroids.k();
    let job = AssignJob {
        tag,
        centroids: SideData::seal(Centroids(centroids.centroids.clone())),
    };
    let out = engine.run_job(&job, y)?;
    let mut report = out.report;

    let mut labels = vec![0u32; y.n()];
    let mut objective = 0.0;
    for (id, c, cost) in out.local.into_iter().flatten() {
        labels[id as usize] = c;
        objective += cost;
    }

    let mut next = centroids.centroids.clone();
    let mut empty = Vec::new();
    for (c, mut means) in out.reduced {
        match means.pop().flatten() {
            Some(mean) => {
                for (i, v) in mean.into_iter().enumerate() {
                    next.set(i, c as usize, v);
                }
            }
            None => empty.push(c as usize),
        }
    }
    debug_assert!(empty.len() <= k);

    if !empty.is_empty() {
        let job = FarthestJob {
            tag,
            need: empty.len(),
            labels: &labels,
            centroids: SideData::seal(Centroids(next.clone())),
        };
        let far = engine.run_job(&job, y)?;
        report.merge(&far.report);
        let picks: Vec<u64> = far.reduced.into_iter().flat_map(|(_, v)| v).collect();
        for (&c, &id) in empty.iter().zip(&picks) {
            for (i, &v) in y.column(id as usize).iter().enumerate() {
                next.set(i, c, v);
            }
        }
    }

    Ok(IterationOutcome {
        centroids: CentroidSet {
            centroids: next,
            iteration: centroids.iteration + 1,
        },
        assignment: Assignment { labels },
        objective,
        reseeded: empty.len(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationLog {
    pub iter: usize,
    pub objective: f64,
    pub moved: usize,
    pub shuffle_bytes: u64,
    pub records_shuffled: u64,
    pub reseeded: usize,
}

impl IterationLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRun {
    pub assignment: Assignment,
    pub centroids: CentroidSet,
    pub log: Vec<IterationLog>,
    /// Assignment after each iteration.
    pub history: Vec<Assignment>,
    pub report: ShuffleReport,
}

/// Lloyd iterations from an explicit starting point, stopping at the cap or when
/// an iteration leaves every assignment unchanged.
pub fn cluster_from(
    engine: &Engine,
    y: &EmbeddingMatrix,
    start: CentroidSet,
    tag: Discrepancy,
    max_iters: usize,
) -> Result<ClusterRun> {
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    let mut centroids = start;
    let mut prev: Option<Assignment> = None;
    let mut log = Vec::new();
    let mut history = Vec::new();
    let mut report = ShuffleReport::default();
    for iter in 1..=max_iters {
        let step = cluster_iterate(engine, y, &centroids, tag)?;
        let moved = match &prev {
            Some(p) => p.labels.iter().zip(&step.assignment.labels).filter(|(a, b)| a != b).count(),
            None => y.n(),
        };
        report.merge(&step.report);
        log.push(IterationLog {
            iter,
            objective: step.objective,
            moved,
            shuffle_bytes: step.report.bytes_shuffled,
            records_shuffled: step.report.records_shuffled,
            reseeded: step.reseeded,
        });
        history.push(step.assignment.clone());
        centroids = step.centroids;
        prev = Some(step.assignment);
        if moved == 0 {
            break;
        }
    }
    Ok(ClusterRun {
        assignment: prev.expect("at least one iteration"),
        centroids,
        log,
        history,
        report,
    })
}

/// Seeded initialization followed by [`cluster_from`].
pub fn cluster_run(engine: &Engine, y: &EmbeddingMatrix, tag: Discrepancy, policy: &LloydPolicy) -> Result<ClusterRun> {
    let start = centroids_from_ids(y, &policy.initial_ids(y.n())?)?;
    cluster_from(engine, y, start, tag, policy.max_iters)
}
