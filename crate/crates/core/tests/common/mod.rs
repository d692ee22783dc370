#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use quiet_core::pipeline::{cmd_collect, cmd_score, CollectOptions, CollectReport, EmbeddingText, ScoreOptions};
use quiet_core::providers::{load_provider_configs, Cache, RequestKind};
use quiet_core::stats::ScoringConfig;
use quiet_core::{testset, Mode, Provider, ProviderConfig};

pub const PARALLELISM: usize = 4;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/e2e")
}

pub fn configs(file: &str) -> Vec<ProviderConfig> {
    load_provider_configs(&fixture_dir().join(file)).unwrap()
}

/// Stores each hand-written transcript as the response to the collection
/// prompt, so replay collection serves them.
pub fn seed_transcripts(cache_dir: &Path) {
    let ts = testset::load_testset_file(fixture_dir().join("testset.json")).unwrap();
    let prompt = testset::render_prompt(&ts);
    for cfg in configs("models.json") {
        let text = fs::read_to_string(fixture_dir().join("transcripts").join(format!("{}.txt", cfg.name))).unwrap();
        let p = Provider::new(cfg, Mode::Record, Some(Cache::new(cache_dir))).unwrap();
        p.store_response(RequestKind::Chat, &prompt, serde_json::Value::String(text)).unwrap();
    }
}

/// Collects and scores the fixture into `out` under the default grid.
pub fn run_fixture(out: &Path, mode: Mode, cache_dir: &Path) -> quiet_core::Result<CollectReport> {
    let report = cmd_collect(&CollectOptions {
        testset: fixture_dir().join("testset.json"),
        models: configs("models.json"),
        mode,
        cache_dir: Some(cache_dir.to_path_buf()),
        out: out.to_path_buf(),
        parallelism: PARALLELISM,
        reveal_constraints: false,
    })?;
    cmd_score(&ScoreOptions {
        run_dir: out.to_path_buf(),
        judges: configs("judges.json"),
        embedding: configs("embedding.json").remove(0),
        mode,
        cache_dir: Some(cache_dir.to_path_buf()),
        configs: ScoringConfig::default_grid(),
        parallelism: PARALLELISM,
        exclude_from_centroid: BTreeSet::new(),
        embedding_text: EmbeddingText::Filling,
    })?;
    Ok(report)
}

pub fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Paths that differ between two trees, including files present on one side only.
pub fn diff_trees(a: &Path, b: &Path) -> Vec<String> {
    let fa = files_under(a);
    let fb = files_under(b);
    let mut diffs = Vec::new();
    for f in fa.iter().filter(|f| !fb.contains(f)) {
        diffs.push(format!("only in {}: {}", a.display(), f.display()));
    }
    for f in fb.iter().filter(|f| !fa.contains(f)) {
        diffs.push(format!("only in {}: {}", b.display(), f.display()));
    }
    for f in fa.iter().filter(|f| fb.contains(f)) {
        if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
            diffs.push(format!("differs: {}", f.display()));
        }
    }
    diffs
}
