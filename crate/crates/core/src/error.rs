use thiserror::Error;

use crate::ars::ArsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-binary participation entry {value} at user {user}, thread {thread}")]
    NonBinaryParticipation {
        user: usize,
        thread: usize,
        value: f64,
    },

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("no threads: coefficient estimates are undefined without observed lengths")]
    NoThreads,

    #[error("degenerate feature dimension {0}: zero variance across users")]
    DegenerateFeature(usize),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precision not SPD: {0}")]
    NotPositiveDefinite(String),

    #[error("singular scatter matrix in cluster update")]
    SingularScatter,

    #[error("adaptive rejection sampling failed: {0}")]
    Ars(#[from] ArsError),

    #[error("adaptive rejection sampling of {target} failed: {source}")]
    ArsTarget {
        target: &'static str,
        #[source]
        source: ArsError,
    },

    #[error("empty chain: no post-burn-in records")]
    EmptyChain,

    #[error("{0} users exceeds the dense pairwise-matrix limit of 2000")]
    TooManyUsers(usize),

    #[error("k-means with {k} clusters requested for {n} users")]
    TooManyClusters { k: usize, n: usize },

    #[error("malformed {file}: {msg}")]
    DataFormat { file: String, msg: String },

    #[error("invalid chain file: {0}")]
    ChainFormat(String),

    #[error("gibbs step failed at iteration {iter} (last good iteration {last_good})")]
    Step {
        iter: usize,
        last_good: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that come from the sampler's arithmetic rather than
    /// from malformed input or the filesystem.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite(_)
            | Error::SingularScatter
            | Error::Ars(_)
            | Error::ArsTarget { .. } => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
