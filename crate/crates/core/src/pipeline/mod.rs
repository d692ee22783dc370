//! Run orchestration: collect responses, score them, and emit tables.
//!
//! A run directory holds everything one evaluation produced:
//!
//! ```text
//! run/
//!   manifest.json          inputs and settings
//!   testset.json           the test set as loaded
//!   responses/<model>.json transcripts and parsed fillings
//!   collect_report.json    per-model parse status
//!   judge_scores.csv ...   scoring outputs, listed in artifacts.json
//! ```

mod collect;
mod csvio;
mod report;
mod score;
mod sensitivity;
mod verify;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::providers::{ApiKind, Cache, Mode, Provider, ProviderConfig};
use crate::testset::{BlankId, TestSet};

pub use collect::{cmd_collect, CollectOptions, CollectReport, ModelStatus, ResponseStatus};
pub use score::{cmd_score, evaluate_configs, ConfigResult, EmbeddingText, ScoreInputs, ScoreOptions};
pub use sensitivity::{cmd_sensitivity, cmd_stats, load_score_inputs, SensitivityOptions, StatsReport};
pub use verify::{
    cmd_verify_paper, parse_paper_tables, render_verify_report, verify_paper, PaperRow, VerifyReport,
    VerifyRow, PAPER_TOLERANCE,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TESTSET_FILE: &str = "testset.json";
pub const RESPONSES_DIR: &str = "responses";
pub const ARTIFACTS_FILE: &str = "artifacts.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSummary {
    pub name: String,
    pub model: String,
    pub api: ApiKind,
    pub endpoint: String,
}

impl From<&ProviderConfig> for ProviderSummary {
    fn from(c: &ProviderConfig) -> Self {
        ProviderSummary {
            name: c.name.clone(),
            model: c.model.clone(),
            api: c.api,
            endpoint: c.endpoint.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collected_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scored_at: Option<String>,
}

/// Inputs and settings of a run. Timestamps are left out of replay runs so
/// that their artifacts are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub testset_id: String,
    pub testset_digest: String,
    pub models: Vec<ProviderSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collect_mode: Option<Mode>,
    pub reveal_constraints: bool,
    #[serde(default)]
    pub judges: Vec<ProviderSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<ProviderSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_text: Option<EmbeddingText>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_mode: Option<Mode>,
    #[serde(default)]
    pub configs: Vec<String>,
    #[serde(default)]
    pub exclude_from_centroid: Vec<String>,
    pub parallelism: usize,
    #[serde(default)]
    pub timestamps: Timestamps,
}

impl RunManifest {
    /// Digest over everything that determines the run's outputs.
    pub fn compute_run_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.testset_digest.as_bytes());
        for part in [
            serde_json::to_string(&self.models),
            serde_json::to_string(&self.judges),
            serde_json::to_string(&self.embedding),
            serde_json::to_string(&self.configs),
            serde_json::to_string(&self.exclude_from_centroid),
            serde_json::to_string(&self.embedding_text),
            serde_json::to_string(&self.reveal_constraints),
        ] {
            h.update([0]);
            h.update(part.expect("manifest fields serialize").as_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn load(run_dir: &Path) -> Result<Option<RunManifest>> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Files emitted by a command, relative to the run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunArtifacts {
    pub root: PathBuf,
    pub files: Vec<PathBuf>,
}

impl RunArtifacts {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

/// Digest of the canonical serialization, so formatting changes in the
/// source file do not change it.
pub fn testset_digest(ts: &TestSet) -> String {
    let canonical = serde_json::to_string(ts).expect("test sets serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn timestamp(mode: Mode) -> Option<String> {
    (mode != Mode::Replay).then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

/// Collects written files and their digests.
#[derive(Debug)]
pub(crate) struct ArtifactWriter {
    root: PathBuf,
    files: BTreeSet<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(ArtifactWriter { root: root.to_path_buf(), files: BTreeSet::new() })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.insert(PathBuf::from(rel));
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(rel, e))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    pub fn write_csv(&mut self, rel: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let bytes = csvio::to_bytes(rel, header, rows)?;
        self.write(rel, &bytes)
    }

    pub fn into_artifacts(self) -> RunArtifacts {
        RunArtifacts { root: self.root, files: self.files.into_iter().collect() }
    }

    /// Writes `artifacts.json` listing every file with its sha256.
    pub fn finish(mut self, run_id: &str) -> Result<RunArtifacts> {
        #[derive(Serialize)]
        struct Entry {
            path: String,
            sha256: String,
        }
        let mut entries = Vec::new();
        for rel in &self.files {
            let path = self.root.join(rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            entries.push(Entry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(&bytes),
            });
        }
        let index = serde_json::json!({ "run_id": run_id, "files": entries });
        self.write_json(ARTIFACTS_FILE, &index)?;
        Ok(RunArtifacts { root: self.root, files: self.files.into_iter().collect() })
    }
}

/// One transcript on disk. `fillings` is authoritative when present;
/// otherwise `raw_text` is parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFile {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fillings: Option<BTreeMap<BlankId, String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<BlankId>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub aligned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
}

pub(crate) fn response_file_name(model_id: &str) -> String {
    let safe: String = model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{RESPONSES_DIR}/{safe}.json")
}

pub fn load_response_files(run_dir: &Path) -> Result<Vec<ResponseFile>> {
    let dir = run_dir.join(RESPONSES_DIR);
    let read = fs::read_dir(&dir).map_err(|_| Error::MissingTranscripts(dir.clone()))?;
    let mut paths: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let r: ResponseFile =
            serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))?;
        out.push(r);
    }
    if out.is_empty() {
        return Err(Error::MissingTranscripts(dir));
    }
    out.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    if let Some(w) = out.windows(2).find(|w| w[0].model_id == w[1].model_id) {
        return Err(Error::Config(format!("two transcripts for model {}", w[0].model_id)));
    }
    Ok(out)
}

pub(crate) fn load_run_testset(run_dir: &Path) -> Result<TestSet> {
    let path = run_dir.join(TESTSET_FILE);
    if !path.exists() {
        return Err(Error::MissingTranscripts(run_dir.to_path_buf()));
    }
    crate::testset::load_testset_file(&path)
}

pub(crate) fn validated(ts: TestSet) -> Result<TestSet> {
    let report = crate::testset::validate(&ts);
    if !report.is_valid() {
        return Err(Error::InvalidTestSet(report.findings.iter().map(|f| f.to_string()).collect()));
    }
    Ok(ts)
}

pub(crate) fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Builds providers and checks credentials for all of them before any
/// request is sent.
pub(crate) fn build_providers(
    configs: &[ProviderConfig],
    mode: Mode,
    cache_dir: Option<&Path>,
) -> Result<Vec<Provider>> {
    let providers = configs
        .iter()
        .map(|c| Provider::new(c.clone(), mode, cache_dir.map(Cache::new)))
        .collect::<Result<Vec<_>>>()?;
    for p in &providers {
        p.check_credentials()?;
    }
    Ok(providers)
}

pub(crate) fn fmt_full(x: f64) -> String {
    format!("{x}")
}

pub(crate) fn fmt_dp(x: f64, dp: usize) -> String {
    let s = format!("{x:.dp$}");
    // "-0.000" reads as a sign error in a table.
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}
