use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apnc::cluster::{cluster_run, LloydPolicy, DEFAULT_MAX_ITERS};
use apnc::coeffs::{fit_nystrom, fit_stable, Discrepancy, NystromParams, StableParams, Variant};
use apnc::dataset::{load_dense_csv, load_labels, load_sparse, PartitionOptions, PartitionedDataset};
use apnc::embed::embed_all;
use apnc::eval::{nmi, parse_kernel, resolve_kernel, run_experiment, ExperimentConfig};
use apnc::kernels::KernelSpec;
use apnc::kkm::{exact_kkm, KernelMatrix, DEFAULT_CAP};
use apnc::linalg::DEFAULT_EIG_FLOOR;
use apnc::mr::Engine;
use apnc::persist::{load_embedding, load_model, save_assignment, save_embedding, save_model};
use apnc::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Kernel k-means through approximate nearest centroid embeddings.
#[derive(Parser)]
#[command(name = "apnc", version)]
struct Cli {
    /// Worker threads for map and reduce tasks [default: 1, or the config value for pipeline].
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample landmarks and fit embedding coefficients.
    Coeffs(CoeffsArgs),
    /// Embed every instance of a dataset with a fitted model.
    Embed(EmbedArgs),
    /// Lloyd clustering over stored embeddings.
    Cluster(ClusterArgs),
    /// Exact kernel k-means over the full gram matrix.
    Exact(ExactArgs),
    /// NMI between two label files.
    Eval(EvalArgs),
    /// Repeated end-to-end runs from a key = value config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dense CSV (one instance per row) or libsvm sparse file.
    #[arg(long)]
    data: PathBuf,
    /// Input format; inferred from the extension when omitted (.svm, .libsvm, .sparse are sparse).
    #[arg(long, value_parser = ["csv", "sparse"])]
    format: Option<String>,
    /// Number of contiguous blocks the dataset is split into.
    #[arg(long, default_value_t = 4)]
    partitions: usize,
    /// Reject datasets whose in-memory size exceeds this many bytes.
    #[arg(long)]
    memory_budget: Option<u64>,
}

impl DataArgs {
    fn load(&self) -> Result<PartitionedDataset> {
        let options = PartitionOptions {
            partitions: self.partitions,
            memory_budget: self.memory_budget,
        };
        let sparse = match self.format.as_deref() {
            Some(f) => f == "sparse",
            None => matches!(
                self.data.extension().and_then(|e| e.to_str()),
                Some("svm" | "libsvm" | "sparse")
            ),
        };
        if sparse {
            Ok(load_sparse(&self.data, options)?.0)
        } else {
            load_dense_csv(&self.data, options)
        }
    }
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, default_value = "rbf", value_parser = ["rbf", "polynomial", "neural", "linear"])]
    kernel: String,
    /// RBF bandwidth; self-tuned from a sample when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    offset: Option<f64>,
    /// Neural kernel slope.
    #[arg(long)]
    a: Option<f64>,
    /// Neural kernel intercept.
    #[arg(long)]
    b: Option<f64>,
    /// Instances sampled to self-tune the RBF bandwidth.
    #[arg(long)]
    self_tune_sample: Option<usize>,
}

impl KernelArgs {
    fn resolve(&self, dataset: &PartitionedDataset, seed: u64) -> Result<KernelSpec> {
        let mut map = BTreeMap::new();
        map.insert("kernel".to_string(), self.kernel.clone());
        let params = [
            ("kernel.sigma", self.sigma.map(|v| v.to_string())),
            ("kernel.degree", self.degree.map(|v| v.to_string())),
            ("kernel.offset", self.offset.map(|v| v.to_string())),
            ("kernel.a", self.a.map(|v| v.to_string())),
            ("kernel.b", self.b.map(|v| v.to_string())),
            ("kernel.self-tune-sample", self.self_tune_sample.map(|v| v.to_string())),
        ];
        for (k, v) in params {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        resolve_kernel(&parse_kernel(&map)?, dataset, seed)
    }
}

#[derive(Args)]
struct CoeffsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, value_parser = ["nystrom", "stable"])]
    variant: String,
    /// Expected landmark count.
    #[arg(long)]
    l: usize,
    /// Target dimensionality; for Nystrom defaults to every retained eigenpair.
    #[arg(long)]
    m: Option<usize>,
    /// Landmarks summed per stable row; defaults to 40% of l.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative eigenvalue floor below which directions are dropped.
    #[arg(long, default_value_t = DEFAULT_EIG_FLOOR)]
    eig_floor: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "l2", value_parser = ["l2", "l1"])]
    discrepancy: String,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    partitions: usize,
    /// Labels file: one `id<TAB>cluster` line per instance.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration JSON lines followed by the total shuffle report.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ExactArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest instance count accepted.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    cap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn coeffs(engine: &Engine, args: &CoeffsArgs) -> Result<()> {
    let ds = args.data.load()?;
    let kernel = args.kernel.resolve(&ds, args.seed)?;
    let variant: Variant = args.variant.parse()?;
    let (model, _) = match variant {
        Variant::Nystrom => {
            let params = NystromParams {
                l: args.l,
                m: args.m,
                seed: args.seed,
                eig_floor: args.eig_floor,
            };
            fit_nystrom(engine, &ds, &kernel, &params)?
        }
        Variant::Stable => {
            let m = args.m.ok_or_else(|| Error::Config("--m is required for the stable variant".into()))?;
            let params = StableParams {
                l: args.l,
                m,
                t: args.t,
                seed: args.seed,
                eig_floor: args.eig_floor,
            };
            fit_stable(engine, &ds, &kernel, &params)?
        }
    };
    save_model(&model, &args.out)?;
    eprintln!(
        "{} model: {} landmarks, m = {}, kernel {}",
        model.variant,
        model.l(),
        model.m_effective,
        model.kernel
    );
    Ok(())
}

fn embed(engine: &Engine, args: &EmbedArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let ds = args.data.load()?;
    let (y, _) = embed_all(engine, &ds, &model)?;
    save_embedding(&y, &args.out)?;
    eprintln!("embedded {} instances into {} dimensions", y.n(), y.m());
    Ok(())
}

fn cluster(engine: &Engine, args: &ClusterArgs) -> Result<()> {
    let y = load_embedding(&args.embeddings, args.partitions)?;
    let tag: Discrepancy = args.discrepancy.parse()?;
    let policy = LloydPolicy {
        k: args.k,
        max_iters: args.max_iters,
        seed: args.seed,
    };
    let run = cluster_run(engine, &y, tag, &policy)?;
    save_assignment(&run.assignment, &args.out)?;
    if let Some(path) = &args.log {
        let mut w = BufWriter::new(File::create(path)?);
        for it in &run.log {
            writeln!(w, "{}", it.to_json_line())?;
        }
        writeln!(w, "{}", run.report.to_json_line())?;
        w.flush()?;
    }
    eprintln!("{} iterations", run.log.len());
    Ok(())
}

fn exact(args: &ExactArgs) -> Result<()> {
    let ds = args.data.load()?;
    let kernel = args.kernel.resolve(&ds, args.seed)?;
    let km = KernelMatrix::from_instances(&kernel, ds.instances(), args.cap)?;
    let policy = LloydPolicy {
        k: args.k,
        max_iters: args.max_iters,
        seed: args.seed,
    };
    let run = exact_kkm(&km, &policy)?;
    save_assignment(&run.assignment, &args.out)?;
    eprintln!("{} iterations", run.log.len());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let pred = load_labels(&args.pred)?;
    let truth = load_labels(&args.truth)?;
    println!("{}", nmi(&pred.labels, &truth.labels)?);
    Ok(())
}

fn pipeline(parallelism: Option<usize>, args: &PipelineArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(p) = parallelism {
        cfg.parallelism = p;
    }
    let report = run_experiment(&cfg)?.to_json();
    match &args.out {
        Some(path) => write_text(path, &report),
        None => {
            println!("{report}");
            Ok(())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, format!("{text}\n"))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let engine = || Engine::new(cli.parallelism.unwrap_or(1));
    match &cli.command {
        Command::Coeffs(a) => coeffs(&engine()?, a),
        Command::Embed(a) => embed(&engine()?, a),
        Command::Cluster(a) => cluster(&engine()?, a),
        Command::Exact(a) => exact(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(cli.parallelism, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
