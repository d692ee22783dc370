//! Scoring pipeline for cascade-constrained multi-blank cloze benchmarks.
//!
//! Models fill every blank of a story skeleton. A judge ensemble scores how
//! well each group of fillings meets its constraints (satisfy), embeddings
//! measure how far each filling sits from the cohort consensus (surprise),
//! and the two are combined per group into a composite total.

pub mod error;
pub mod judge;
pub mod pipeline;
pub mod providers;
pub mod scoring;
pub mod stats;
pub mod surprise;
pub mod testset;

pub use error::{Error, ErrorClass, Result};
pub use judge::{Aggregation, JudgeRecord, ScaleKind};
pub use providers::{ChatBackend, EmbedBackend, Mode, Provider, ProviderConfig};
pub use scoring::{composite, leaderboard, CompositeScheme, GroupScore, ModelTotal};
pub use stats::{krippendorff_alpha, robustness_matrix, spearman, ReliabilityMatrix, ScoringConfig};
pub use surprise::EmbeddingVector;
pub use testset::{load_testset, load_testset_file, validate, FilledResponse, TestSet};
