//! Attention-based collaborative filtering over pre-trained item embeddings.
//!
//! The crate is organized as a pipeline:
//!
//! * [`corpus`] — interaction-log ingestion, vocabularies, temporal splits,
//!   and planted-cluster synthetic data generation.
//! * [`sampler`] — smoothed empirical item distributions and O(1) categorical
//!   sampling via the alias method.
//! * [`numkit`] — the dense numeric kernel (matrices, softmax, Adam,
//!   orthogonal initialization, gradient clipping, finite-difference checks).
//! * [`embed`] — skip-gram item embeddings with negative sampling, trained on
//!   behavioral sequences and frozen for all downstream models.
//! * [`attncf`] — the K-layer attention ranker with its analytic backward
//!   pass and the plateau-scheduled training loop.
//! * [`baselines`] — popularity, last-item, weighted-sum (CMA-ES tuned), and
//!   deep-averaging-network comparison rankers.
//! * [`evalkit`] — sampled-candidate ranking evaluation: candidate pools,
//!   NDCG / Recall@K, paired bootstrap significance, and report emission.

pub mod attncf;
pub mod baselines;
pub mod corpus;
pub mod embed;
pub mod evalkit;
pub mod numkit;
pub mod rng;
pub mod sampler;

pub use attncf::{AttentionParams, ForwardTrace, TrainConfig, TrainLog};
pub use baselines::{DanParams, WeightedSumParams};
pub use corpus::{
    Action, HistoryEvent, InteractionEvent, SplitInstance, TestPair, UserHistory, Vocabulary,
};
pub use embed::{EmbeddingTable, SkipGramConfig};
pub use evalkit::{CandidatePool, MetricsReport, Scorer};
pub use numkit::Matrix;
pub use sampler::{AliasTable, SampledDistribution};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// A text input failed to parse; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty result: {0}")]
    Empty(String),
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("bad file format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
