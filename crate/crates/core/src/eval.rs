//! Normalized mutual information and the repeated-run experiment harness.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::cluster::{cluster_run, LloydPolicy, DEFAULT_MAX_ITERS};
use crate::coeffs::{fit_nystrom, fit_stable, ApncModel, NystromParams, StableParams};
use crate::dataset::{load_dense_csv, load_labels, load_sparse, LabelVector, PartitionOptions, PartitionedDataset};
use crate::embed::embed_all;
use crate::error::{Error, Result};
use crate::kernels::{self_tune_rbf, KernelSpec};
use crate::kkm::{exact_kkm, KernelMatrix, DEFAULT_CAP};
use crate::linalg::DEFAULT_EIG_FLOOR;
use crate::mr::{Engine, ShuffleReport};
use crate::synthetic::gaussian_blobs;

/// Co-occurrence counts of predicted clusters (rows) and true classes (columns),
/// over the labels that actually occur, in ascending label order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub row_labels: Vec<u32>,
    pub col_labels: Vec<u32>,
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn new(pred: &[u32], truth: &[u32]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Dimension {
                expected: truth.len(),
                found: pred.len(),
            });
        }
        if pred.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let index = |labels: &[u32]| {
            let mut u: Vec<u32> = labels.to_vec();
            u.sort_unstable();
            u.dedup();
            u
        };
        let rows = index(pred);
        let cols = index(truth);
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for (p, t) in pred.iter().zip(truth) {
            let r = rows.binary_search(p).expect("label indexed");
            let c = cols.binary_search(t).expect("label indexed");
            counts[r][c] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols.len()).map(|c| counts.iter().map(|r| r[c]).sum()).collect();
        Ok(ContingencyTable {
            row_labels: rows,
            col_labels: cols,
            counts,
            row_sums,
            col_sums,
            n: pred.len() as u64,
        })
    }
}

/// Sum of terms in ascending order, so equal multisets give equal sums.
fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    -canonical_sum(
        sums.iter()
            .filter(|&&s| s > 0)
            .map(|&s| {
                let p = s as f64 / n;
                p * p.ln()
            })
            .collect(),
    )
}

/// `I(pred; truth) / sqrt(H(pred) H(truth))` with natural logs; 0 when either
/// side has a single label.
pub fn nmi(pred: &[u32], truth: &[u32]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    let n = t.n as f64;
    let hp = entropy(&t.row_sums, n);
    let ht = entropy(&t.col_sums, n);
    if hp <= 0.0 || ht <= 0.0 {
        return Ok(0.0);
    }
    // a bijection between labels gives I = H(pred) = H(truth) exactly
    if t.row_labels.len() == t.col_labels.len()
        && t.counts.iter().all(|r| r.iter().filter(|&&x| x > 0).count() == 1)
    {
        return Ok(1.0);
    }
    let mut terms = Vec::new();
    for (r, row) in t.counts.iter().enumerate() {
        for (c, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                let ratio = (n * nij) / ((t.row_sums[r] as f64) * (t.col_sums[c] as f64));
                terms.push(nij / n * ratio.ln());
            }
        }
    }
    let mi = canonical_sum(terms).max(0.0);
    Ok((mi / (hp * ht).sqrt()).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nystrom,
    Stable,
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Csv { data: PathBuf, labels: PathBuf },
    Sparse { data: PathBuf },
    Blobs { n: usize, d: usize, k: usize, separation: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelChoice {
    Fixed(KernelSpec),
    /// RBF with bandwidth tuned per run from this many sampled instances.
    SelfTunedRbf { sample: usize },
}

/// Flat `key = value` experiment description; keys mirror the CLI flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub kernel: KernelChoice,
    pub method: Method,
    pub l: usize,
    pub m: Option<usize>,
    pub t: Option<usize>,
    pub k: usize,
    pub max_iters: usize,
    pub seeds: Vec<u64>,
    pub parallelism: usize,
    pub partitions: usize,
    pub memory_budget: Option<u64>,
    pub eig_floor: f64,
    pub kkm_cap: usize,
    pub timings: bool,
    /// Normalized key/values as read, echoed into the report.
    pub raw: BTreeMap<String, String>,
}

pub const DEFAULT_SELF_TUNE_SAMPLE: usize = 500;

struct Keys<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Keys<'_> {
    fn str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn req(&self, key: &str) -> Result<&str> {
        self.str(key).ok_or_else(|| Error::Config(format!("missing key '{key}'")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.str(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'")))
            })
            .transpose()
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment, underscores in keys are
    /// read as dashes.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            map.insert(k.trim().replace('_', "-"), v.trim().to_string());
        }
        Self::from_map(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let keys = Keys { map: &map };
        let method = match keys.req("variant")? {
            "nystrom" => Method::Nystrom,
            "stable" => Method::Stable,
            "exact" => Method::Exact,
            v => return Err(Error::Config(format!("unknown variant '{v}'"))),
        };
        let k: usize = keys
            .parse("k")?
            .ok_or_else(|| Error::Config("missing key 'k'".into()))?;
        let dataset = match keys.str("dataset").unwrap_or("csv") {
            "blobs" => DatasetSource::Blobs {
                n: keys.parse_or("blobs.n", 3000)?,
                d: keys.parse_or("blobs.d", 10)?,
                k: keys.parse_or("blobs.k", k)?,
                separation: keys.parse_or("blobs.separation", 6.0)?,
                seed: keys.parse_or("blobs.seed", 0)?,
            },
            "csv" => DatasetSource::Csv {
                data: keys.req("data")?.into(),
                labels: keys.req("labels")?.into(),
            },
            "sparse" => DatasetSource::Sparse {
                data: keys.req("data")?.into(),
            },
            v => return Err(Error::Config(format!("unknown dataset kind '{v}'"))),
        };
        let kernel = parse_kernel(&map)?;
        let seeds = match keys.str("seeds") {
            Some(list) => list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad seed '{s}'")))
                })
                .collect::<Result<Vec<_>>>()?,
            None => {
                let base: u64 = keys.parse_or("seed", 0)?;
                let repeats: u64 = keys.parse_or("repeats", 1)?;
                (base..base + repeats).collect()
            }
        };
        if seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        let l = match method {
            Method::Exact => keys.parse_or("l", 0)?,
            _ => keys
                .parse("l")?
                .ok_or_else(|| Error::Config("missing key 'l'".into()))?,
        };
        Ok(ExperimentConfig {
            dataset,
            kernel,
            method,
            l,
            m: keys.parse("m")?,
            t: keys.parse("t")?,
            k,
            max_iters: keys.parse_or("max-iters", DEFAULT_MAX_ITERS)?,
            seeds,
            parallelism: keys.parse_or("parallelism", 1)?,
            partitions: keys.parse_or("partitions", 4)?,
            memory_budget: keys.parse("memory-budget")?,
            eig_floor: keys.parse_or("linalg.eig-floor", DEFAULT_EIG_FLOOR)?,
            kkm_cap: keys.parse_or("kkm.cap", DEFAULT_CAP)?,
            timings: keys.parse_or("report-timings", false)?,
            raw: map,
        })
    }
}

/// Reads `kernel` (or `kernel.kind`) and its parameter keys.
pub fn parse_kernel(map: &BTreeMap<String, String>) -> Result<KernelChoice> {
    let keys = Keys { map };
    let kind = keys.str("kernel").or(keys.str("kernel.kind")).unwrap_or("rbf");
    let spec = match kind {
        "rbf" => match keys.parse::<f64>("kernel.sigma")? {
            Some(s) => KernelSpec::rbf(s)?,
            None => {
                return Ok(KernelChoice::SelfTunedRbf {
                    sample: keys.parse_or("kernel.self-tune-sample", DEFAULT_SELF_TUNE_SAMPLE)?,
                })
            }
        },
        "polynomial" => KernelSpec::polynomial(keys.parse_or("kernel.degree", 2)?, keys.parse_or("kernel.offset", 1.0)?)?,
        "neural" => KernelSpec::neural(keys.parse_or("kernel.a", 0.0045)?, keys.parse_or("kernel.b", 0.11)?)?,
        "linear" => KernelSpec::Linear,
        other => return Err(Error::Config(format!("unknown kernel '{other}'"))),
    };
    Ok(KernelChoice::Fixed(spec))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub nmi: f64,
    pub iterations: usize,
    pub m_effective: Option<usize>,
    pub l_realized: Option<usize>,
    pub kernel: String,
    pub objective: f64,
    pub shuffle: ShuffleReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub seed: u64,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: BTreeMap<String, String>,
    pub metadata: BTreeMap<String, String>,
    pub method: Method,
    pub n: usize,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    pub nmi_mean: Option<f64>,
    /// Population standard deviation over completed runs.
    pub nmi_std: Option<f64>,
    pub shuffle_total: ShuffleReport,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn load_source(source: &DatasetSource, options: PartitionOptions) -> Result<(PartitionedDataset, LabelVector)> {
    match source {
        DatasetSource::Csv { data, labels } => {
            let ds = load_dense_csv(data, options)?;
            let lv = load_labels(labels)?;
            if lv.len() != ds.n() {
                return Err(Error::Dimension {
                    expected: ds.n(),
                    found: lv.len(),
                });
            }
            Ok((ds, lv))
        }
        DatasetSource::Sparse { data } => load_sparse(data, options),
        DatasetSource::Blobs {
            n,
            d,
            k,
            separation,
            seed,
        } => gaussian_blobs(*n, *d, *k, *separation, *seed, options),
    }
}

/// Resolves the configured kernel for one run.
pub fn resolve_kernel(choice: &KernelChoice, dataset: &PartitionedDataset, seed: u64) -> Result<KernelSpec> {
    match *choice {
        KernelChoice::Fixed(k) => Ok(k),
        KernelChoice::SelfTunedRbf { sample } => KernelSpec::rbf(self_tune_rbf(dataset, sample, seed)?),
    }
}

struct Stopwatch {
    enabled: bool,
    laps: BTreeMap<String, f64>,
    at: Instant,
}

impl Stopwatch {
    fn new(enabled: bool) -> Self {
        Stopwatch {
            enabled,
            laps: BTreeMap::new(),
            at: Instant::now(),
        }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.laps.insert(name.into(), (now - self.at).as_secs_f64() * 1e3);
        self.at = now;
    }

    fn finish(self) -> Option<BTreeMap<String, f64>> {
        self.enabled.then_some(self.laps)
    }
}

fn stage<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, (String, Error)> {
    r.map_err(|e| (stage.to_string(), e))
}

fn run_once(
    cfg: &ExperimentConfig,
    engine: &Engine,
    dataset: &PartitionedDataset,
    truth: &LabelVector,
    seed: u64,
) -> std::result::Result<RunRecord, (String, Error)> {
    let mut clock = Stopwatch::new(cfg.timings);
    let kernel = stage("kernel", resolve_kernel(&cfg.kernel, dataset, seed))?;
    let policy = LloydPolicy {
        k: cfg.k,
        max_iters: cfg.max_iters,
        seed,
    };
    let mut shuffle = ShuffleReport::default();

    let (pred, iterations, objective, model): (Vec<u32>, usize, f64, Option<ApncModel>) = match cfg.method {
        Method::Exact => {
            let km = stage("gram", KernelMatrix::from_instances(&kernel, dataset.instances(), cfg.kkm_cap))?;
            clock.lap("gram");
            let run = stage("cluster", exact_kkm(&km, &policy))?;
            clock.lap("cluster");
            let objective = run.log.last().map_or(0.0, |it| it.objective);
            (run.assignment.labels, run.log.len(), objective, None)
        }
        Method::Nystrom | Method::Stable => {
            let (model, report) = if cfg.method == Method::Nystrom {
                let params = NystromParams {
                    l: cfg.l,
                    m: cfg.m,
                    seed,
                    eig_floor: cfg.eig_floor,
                };
                stage("coeffs", fit_nystrom(engine, dataset, &kernel, &params))?
            } else {
                let m = cfg
                    .m
                    .ok_or_else(|| ("coeffs".to_string(), Error::Config("stable variant needs 'm'".into())))?;
                let params = StableParams {
                    l: cfg.l,
                    m,
                    t: cfg.t,
                    seed,
                    eig_floor: cfg.eig_floor,
                };
                stage("coeffs", fit_stable(engine, dataset, &kernel, &params))?
            };
            shuffle.merge(&report);
            clock.lap("coeffs");
            let (y, report) = stage("embed", embed_all(engine, dataset, &model))?;
            shuffle.merge(&report);
            clock.lap("embed");
            let run = stage("cluster", cluster_run(engine, &y, model.discrepancy, &policy))?;
            shuffle.merge(&run.report);
            clock.lap("cluster");
            let objective = run.log.last().map_or(0.0, |it| it.objective);
            (run.assignment.labels, run.log.len(), objective, Some(model))
        }
    };
    let nmi = stage("nmi", nmi(&pred, &truth.labels))?;
    Ok(RunRecord {
        seed,
        nmi,
        iterations,
        m_effective: model.as_ref().map(|m| m.m_effective),
        l_realized: model.as_ref().map(|m| m.l()),
        kernel: kernel.to_string(),
        objective,
        shuffle,
        timings_ms: clock.finish(),
    })
}

/// Runs coefficients, embedding, clustering and NMI once per seed.
///
/// A failing seed is recorded and the remaining seeds still run; only a
/// dataset or engine failure aborts the whole experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let options = PartitionOptions {
        partitions: cfg.partitions,
        memory_budget: cfg.memory_budget,
    };
    let (dataset, truth) = load_source(&cfg.dataset, options)?;
    if truth.len() != dataset.n() {
        return Err(Error::Dimension {
            expected: dataset.n(),
            found: truth.len(),
        });
    }
    let engine = Engine::new(cfg.parallelism)?;

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut shuffle_total = ShuffleReport::default();
    for &seed in &cfg.seeds {
        match run_once(cfg, &engine, &dataset, &truth, seed) {
            Ok(r) => {
                shuffle_total.merge(&r.shuffle);
                runs.push(r);
            }
            Err((stage, e)) => failures.push(RunFailure {
                seed,
                stage,
                error: e.to_string(),
            }),
        }
    }
    let (nmi_mean, nmi_std) = if runs.is_empty() {
        (None, None)
    } else {
        let xs: Vec<f64> = runs.iter().map(|r| r.nmi).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        (Some(mean), Some(var.sqrt()))
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("nmi_normalization".into(), "sqrt(H(pred) * H(truth)), natural log".into());
    metadata.insert("self_tune_rule".into(), "sigma = sqrt(mean pairwise squared distance / 2)".into());
    metadata.insert("std".into(), "population".into());
    Ok(ExperimentReport {
        config: cfg.raw.clone(),
        metadata,
        method: cfg.method,
        n: dataset.n(),
        runs,
        failures,
        nmi_mean,
        nmi_std,
        shuffle_total,
    })
}
