use std::path::PathBuf;

/// Error type shared by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("block {block} needs {bytes} bytes, over the per-machine budget of {budget} bytes")]
    MemoryBudget { block: usize, bytes: u64, budget: u64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate bandwidth: all sampled points are identical")]
    DegenerateBandwidth,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("jacobi eigensolver did not converge after {0} sweeps")]
    NotConverged(usize),
    #[error("rank-zero matrix: no eigenvalue above the floor")]
    RankZero,
    #[error("landmark sampling realized {realized} points, need at least {needed} (after {attempts} attempts)")]
    SamplingExhausted {
        realized: usize,
        needed: usize,
        attempts: usize,
    },
    #[error("not an APNC model")]
    BadMagic,
    #[error("truncated model")]
    TruncatedModel,
    #[error("truncated embedding file")]
    TruncatedEmbedding,
    #[error("not an APNC embedding file")]
    BadEmbeddingMagic,
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("job '{job}' failed in map at record {record}: {source}")]
    MapFailed {
        job: String,
        record: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("job '{job}' failed in reduce at key {key}: {source}")]
    ReduceFailed {
        job: String,
        key: String,
        #[source]
        source: Box<Error>,
    },
    #[error("job '{0}' mutated its sealed side data")]
    SideDataMutated(String),
    #[error("missing embedding portion {block} for instance {id}")]
    MissingPortion { id: u64, block: usize },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
