//! Probes over embedding dumps: exact cosine k-NN, neighborhood purity,
//! k-NN classification, and the logistic-regression word probe.

mod embedding;
mod knn;
mod word_probe;

pub use embedding::{read_embeddings, write_embeddings, EmbeddingKind, EmbeddingRecord, EmbeddingSet};
pub use knn::{
    cosine_knn, cosine_similarity, knn_classify, knn_neighbors, knn_vote, neighborhood_purity, Neighbor,
    DEFAULT_K,
};
pub use word_probe::{
    apply_word_probe, logistic_gradient, logistic_objective, train_word_probe, train_word_probe_from, ProbeConfig,
    ProbeModel, TrainingMeta,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector `{0}` has zero norm")]
    DegenerateVector(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("record `{0}` has no label")]
    Unlabeled(String),
    #[error("training data has a single class; need at least 2 examples of each")]
    DegenerateTraining,
    #[error("optimizer diverged: {0}")]
    Numeric(String),
    #[error("line {line}: malformed embedding: {reason}")]
    Parse { line: usize, reason: String },
    #[error("embedding I/O failed: {0}")]
    Io(#[from] std::io::Error),
}
