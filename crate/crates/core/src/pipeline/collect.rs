use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_providers, response_file_name, testset_digest, thread_pool, timestamp, validated, ArtifactWriter,
    ProviderSummary, ResponseFile, RunArtifacts, RunManifest, Timestamps, MANIFEST_FILE, TESTSET_FILE,
};
use crate::error::{Error, Result};
use crate::providers::{Mode, ProviderConfig, RequestKind};
use crate::testset::{self, BlankId, PromptOptions};

#[derive(Debug, Clone)]
pub struct CollectOptions {
    pub testset: PathBuf,
    pub models: Vec<ProviderConfig>,
    pub mode: Mode,
    pub cache_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub parallelism: usize,
    pub reveal_constraints: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Complete,
    /// Some blanks could not be recovered.
    Incomplete,
    /// Nothing could be recovered; the transcript is kept.
    Unparsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStatus {
    pub model_id: String,
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<BlankId>,
    #[serde(default)]
    pub aligned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectReport {
    pub run_id: String,
    pub models: Vec<ModelStatus>,
    #[serde(skip)]
    pub artifacts: RunArtifacts,
}

impl CollectReport {
    pub fn flagged(&self) -> impl Iterator<Item = &ModelStatus> {
        self.models.iter().filter(|m| m.status != ResponseStatus::Complete)
    }
}

/// Parses a raw transcript into a response file plus status. Empty
/// fillings count as missing.
pub(crate) fn interpret(ts: &testset::TestSet, model_id: &str, raw: &str) -> (ResponseFile, ModelStatus) {
    match testset::parse_response_lenient(ts, raw, model_id) {
        Ok(parsed) => {
            let mut fillings = parsed.response.fillings;
            fillings.retain(|_, v| !v.trim().is_empty());
            let missing: Vec<BlankId> =
                ts.blank_ids().into_iter().filter(|k| !fillings.contains_key(k)).collect();
            let status = if missing.is_empty() { ResponseStatus::Complete } else { ResponseStatus::Incomplete };
            (
                ResponseFile {
                    model_id: model_id.to_string(),
                    raw_text: Some(raw.to_string()),
                    fillings: Some(fillings),
                    missing: missing.clone(),
                    aligned: parsed.aligned,
                    parse_error: None,
                },
                ModelStatus { model_id: model_id.to_string(), status, missing, aligned: parsed.aligned, error: None },
            )
        }
        Err(e) => (
            ResponseFile {
                model_id: model_id.to_string(),
                raw_text: Some(raw.to_string()),
                fillings: None,
                missing: ts.blank_ids(),
                aligned: false,
                parse_error: Some(e.to_string()),
            },
            ModelStatus {
                model_id: model_id.to_string(),
                status: ResponseStatus::Unparsed,
                missing: ts.blank_ids(),
                aligned: false,
                error: Some(e.to_string()),
            },
        ),
    }
}

/// Queries every model once with the standardized prompt and stores the
/// transcripts. Models whose transcripts cannot be fully parsed are kept
/// and flagged.
pub fn cmd_collect(opts: &CollectOptions) -> Result<CollectReport> {
    let ts = validated(testset::load_testset_file(&opts.testset)?)?;
    if opts.models.is_empty() {
        return Err(Error::Config("no models to collect from".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for m in &opts.models {
        if m.kind != RequestKind::Chat {
            return Err(Error::Config(format!("model {:?} is not a chat backend", m.name)));
        }
        if !seen.insert(&m.name) {
            return Err(Error::Config(format!("model {:?} listed twice", m.name)));
        }
    }
    let providers = build_providers(&opts.models, opts.mode, opts.cache_dir.as_deref())?;

    let prompt = testset::render_prompt_with(&ts, PromptOptions { reveal_constraints: opts.reveal_constraints });
    let pool = thread_pool(opts.parallelism)?;
    let transcripts: Vec<Result<String>> =
        pool.install(|| providers.par_iter().map(|p| p.chat_complete(&prompt)).collect());
    let transcripts = transcripts.into_iter().collect::<Result<Vec<_>>>()?;

    let mut manifest = RunManifest {
        run_id: String::new(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        testset_id: ts.id.clone(),
        testset_digest: testset_digest(&ts),
        models: opts.models.iter().map(ProviderSummary::from).collect(),
        collect_mode: Some(opts.mode),
        reveal_constraints: opts.reveal_constraints,
        judges: Vec::new(),
        embedding: None,
        embedding_text: None,
        score_mode: None,
        configs: Vec::new(),
        exclude_from_centroid: Vec::new(),
        parallelism: opts.parallelism,
        timestamps: Timestamps { collected_at: timestamp(opts.mode), scored_at: None },
    };
    manifest.run_id = manifest.compute_run_id();

    let mut w = ArtifactWriter::new(&opts.out)?;
    w.write_json(MANIFEST_FILE, &manifest)?;
    w.write_json(TESTSET_FILE, &ts)?;
    w.write("prompt.txt", prompt.as_bytes())?;

    let mut statuses = Vec::new();
    for (cfg, raw) in opts.models.iter().zip(&transcripts) {
        let (file, status) = interpret(&ts, &cfg.name, raw);
        match status.status {
            ResponseStatus::Complete => {}
            ResponseStatus::Incomplete => log::warn!(
                "{}: blanks {:?} missing; excluded from surprise cohorts there",
                cfg.name,
                status.missing
            ),
            ResponseStatus::Unparsed => log::warn!(
                "{}: transcript could not be parsed ({}); kept and flagged",
                cfg.name,
                status.error.as_deref().unwrap_or("")
            ),
        }
        w.write_json(&response_file_name(&cfg.name), &file)?;
        statuses.push(status);
    }
    statuses.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    w.write_json("collect_report.json", &statuses)?;

    Ok(CollectReport { run_id: manifest.run_id, models: statuses, artifacts: w.into_artifacts() })
}
