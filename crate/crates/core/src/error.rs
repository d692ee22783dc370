use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Validation,
    Provider,
    Scoring,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {what}: {source}")]
    Json {
        what: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error in {what}: {source}")]
    Csv {
        what: String,
        #[source]
        source: csv::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),

    // test sets and responses
    #[error("dangling {kind} reference: {id}")]
    DanglingReference { kind: &'static str, id: String },
    #[error("test set failed validation with {} finding(s): {}", .0.len(), .0.join("; "))]
    InvalidTestSet(Vec<String>),
    #[error("unknown group id {0}")]
    UnknownGroup(u32),
    #[error("response is missing blank(s) {}", fmt_ids(.0))]
    MissingBlanks(Vec<u32>),
    #[error("response tags blank {0:02} more than once")]
    DuplicateTag(u32),
    #[error("response tags blank {0:02}, which the test set does not have")]
    UnknownBlankTag(u32),
    #[error("skeleton alignment failed: only {found} of {total} fixed anchors located")]
    AlignmentFailure { found: usize, total: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),

    // providers
    #[error("replay cache miss for key {key}")]
    CacheMiss { key: String },
    #[error("provider {provider} failed after {attempts} attempt(s): {message}")]
    Transport {
        provider: String,
        attempts: u32,
        message: String,
    },
    #[error("provider {provider} needs credential env var {var}, which is not set")]
    MissingCredential { provider: String, var: String },
    #[error("provider {provider} returned an unusable response: {message}")]
    BadResponse { provider: String, message: String },

    // judging
    #[error("judge transcript has no SCORE line: {transcript:?}")]
    NoScoreLine { transcript: String },
    #[error("score {value} is outside the {scale} domain in transcript {transcript:?}")]
    OutOfDomain {
        value: String,
        scale: &'static str,
        transcript: String,
    },
    #[error("no judge records to aggregate")]
    EmptyRecords,
    #[error("judge records mix scales or triples")]
    MixedRecords,
    #[error("missing constraint score for {0}")]
    MissingConstraintScore(String),
    #[error("every judge dropped for model {model}, group {group}, constraint {constraint}")]
    EnsembleFailure {
        model: String,
        group: u32,
        constraint: String,
    },

    // geometry
    #[error("vector norm {0:e} is too close to zero")]
    NearZeroVector(f64),
    #[error("cohort mean is degenerate (norm {0:e})")]
    DegenerateCentroid(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no surprise entry for blank {blank:02}, model {model}")]
    MissingBlankEntry { blank: u32, model: String },

    // scoring & stats
    #[error("model {model} has no score for group {group}")]
    MissingGroup { model: String, group: u32 },
    #[error("sequence lengths differ or are too short: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sequence is constant; rank correlation undefined")]
    ConstantSequence,
    #[error("expected disagreement is zero; alpha undefined")]
    ZeroExpectedDisagreement,
    #[error("need at least {needed} {what}, found {found}")]
    TooFew {
        what: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("model sets differ between configurations {0} and {1}")]
    ModelSetMismatch(String, String),
    #[error("malformed table: {0}")]
    MalformedTable(String),
    #[error("no response transcripts found in {0}")]
    MissingTranscripts(PathBuf),
}

fn fmt_ids(ids: &[u32]) -> String {
    ids.iter()
        .map(|k| format!("{k:02}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(what: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            what: what.into(),
            source,
        }
    }

    pub fn csv(what: impl Into<String>, source: csv::Error) -> Self {
        Error::Csv {
            what: what.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Io { .. } => ErrorClass::Usage,
            Error::DanglingReference { .. }
            | Error::InvalidTestSet(_)
            | Error::Json { .. }
            | Error::Csv { .. }
            | Error::MalformedTable(_) => ErrorClass::Validation,
            Error::CacheMiss { .. }
            | Error::Transport { .. }
            | Error::MissingCredential { .. }
            | Error::BadResponse { .. } => ErrorClass::Provider,
            _ => ErrorClass::Scoring,
        }
    }
}
