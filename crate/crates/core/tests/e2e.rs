mod common;

use std::collections::BTreeSet;
use std::fs;

use quiet_core::pipeline::{
    cmd_collect, cmd_score, cmd_sensitivity, cmd_stats, CollectOptions, EmbeddingText, ResponseStatus, ScoreOptions,
    SensitivityOptions,
};
use quiet_core::providers::{Cache, RequestKind};
use quiet_core::stats::ScoringConfig;
use quiet_core::{testset, Error, Mode, Provider};

#[test]
fn replay_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let report = common::run_fixture(&run, Mode::Replay, &common::fixture_dir().join("cache")).unwrap();
    assert_eq!(report.models.len(), 3);
    assert_eq!(report.flagged().count(), 0);
    let diffs = common::diff_trees(&common::fixture_dir().join("golden"), &run);
    assert!(diffs.is_empty(), "{diffs:#?}");
}

#[test]
fn untagged_transcript_is_aligned() {
    let dir = tempfile::tempdir().unwrap();
    let report = common::run_fixture(&dir.path().join("run"), Mode::Replay, &common::fixture_dir().join("cache")).unwrap();
    let untagged = report.models.iter().find(|m| m.model_id == "mock-untagged").unwrap();
    assert!(untagged.aligned);
    assert_eq!(untagged.status, ResponseStatus::Complete);
}

#[test]
fn empty_cache_replay_is_a_cache_miss() {
    let dir = tempfile::tempdir().unwrap();
    let err = common::run_fixture(&dir.path().join("run"), Mode::Replay, &dir.path().join("cache")).unwrap_err();
    assert!(matches!(err, Error::CacheMiss { .. }), "{err}");
}

fn collect_with(dir: &std::path::Path, transcript_for: impl Fn(&str) -> String) -> quiet_core::pipeline::CollectReport {
    let cache = dir.join("cache");
    let ts = testset::load_testset_file(common::fixture_dir().join("testset.json")).unwrap();
    let prompt = testset::render_prompt(&ts);
    for cfg in common::configs("models.json") {
        let text = transcript_for(&cfg.name);
        let p = Provider::new(cfg, Mode::Record, Some(Cache::new(&cache))).unwrap();
        p.store_response(RequestKind::Chat, &prompt, serde_json::Value::String(text)).unwrap();
    }
    cmd_collect(&CollectOptions {
        testset: common::fixture_dir().join("testset.json"),
        models: common::configs("models.json"),
        mode: Mode::Replay,
        cache_dir: Some(cache),
        out: dir.join("run"),
        parallelism: 2,
        reveal_constraints: false,
    })
    .unwrap()
}

fn transcript(name: &str) -> String {
    fs::read_to_string(common::fixture_dir().join("transcripts").join(format!("{name}.txt"))).unwrap()
}

#[test]
fn omitted_blank_is_flagged_and_scoring_continues() {
    let dir = tempfile::tempdir().unwrap();
    let report = collect_with(dir.path(), |name| {
        let t = transcript(name);
        if name == "mock-tagged" {
            t.replace("⟦8: my daughter would find the same note taped to her locker⟧", "something")
        } else {
            t
        }
    });
    let flagged: Vec<_> = report.flagged().collect();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0].status, ResponseStatus::Incomplete);
    assert_eq!(flagged[0].missing, vec![8]);

    // Judges and embeddings are served by the stub backends, so no cache is needed.
    let run = dir.path().join("run");
    cmd_score(&ScoreOptions {
        run_dir: run.clone(),
        judges: common::configs("judges.json"),
        embedding: common::configs("embedding.json").remove(0),
        mode: Mode::Live,
        cache_dir: None,
        configs: vec![ScoringConfig::MAIN],
        parallelism: 2,
        exclude_from_centroid: BTreeSet::new(),
        embedding_text: EmbeddingText::Filling,
    })
    .unwrap();
    let blanks = fs::read_to_string(run.join("surprise_blanks.csv")).unwrap();
    assert!(blanks.contains("8,mock-tagged,NA,0.000"), "{blanks}");
    let md = fs::read_to_string(run.join("report.md")).unwrap();
    assert!(md.contains("mock-tagged"));
    assert!(!md.contains("All responses complete."));
}

#[test]
fn unparseable_transcript_is_kept_and_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let report = collect_with(dir.path(), |name| {
        if name == "mock-terse" { "I would rather not.".to_string() } else { transcript(name) }
    });
    let terse = report.models.iter().find(|m| m.model_id == "mock-terse").unwrap();
    assert_eq!(terse.status, ResponseStatus::Unparsed);
    let kept = fs::read_to_string(dir.path().join("run/responses/mock-terse.json")).unwrap();
    assert!(kept.contains("I would rather not."));
}

#[test]
fn record_without_credentials_fails_before_network() {
    let dir = tempfile::tempdir().unwrap();
    let mut models = common::configs("models.json");
    for m in &mut models {
        m.auth = "QUIET_TEST_UNSET_KEY".into();
        m.endpoint = "http://127.0.0.1:9/v1/chat/completions".into();
    }
    let err = cmd_collect(&CollectOptions {
        testset: common::fixture_dir().join("testset.json"),
        models,
        mode: Mode::Record,
        cache_dir: Some(dir.path().join("cache")),
        out: dir.path().join("run"),
        parallelism: 1,
        reveal_constraints: false,
    })
    .unwrap_err();
    assert!(matches!(err, Error::MissingCredential { .. }), "{err}");
    assert!(!dir.path().join("cache").exists());
    assert!(!dir.path().join("run").exists());
}

#[test]
fn single_config_gives_unit_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cache = common::fixture_dir().join("cache");
    cmd_collect(&CollectOptions {
        testset: common::fixture_dir().join("testset.json"),
        models: common::configs("models.json"),
        mode: Mode::Replay,
        cache_dir: Some(cache.clone()),
        out: run.clone(),
        parallelism: 1,
        reveal_constraints: false,
    })
    .unwrap();
    cmd_score(&ScoreOptions {
        run_dir: run.clone(),
        judges: common::configs("judges.json"),
        embedding: common::configs("embedding.json").remove(0),
        mode: Mode::Replay,
        cache_dir: Some(cache),
        configs: vec![ScoringConfig::MAIN],
        parallelism: 1,
        exclude_from_centroid: BTreeSet::new(),
        embedding_text: EmbeddingText::Filling,
    })
    .unwrap();
    let m = fs::read_to_string(run.join("final_scores.spearman.csv")).unwrap();
    assert_eq!(m, "config,6pt-soft-C1.0\n6pt-soft-C1.0,1.000\n");
}

#[test]
fn sensitivity_and_stats_reuse_stored_scores() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    common::run_fixture(&run, Mode::Replay, &common::fixture_dir().join("cache")).unwrap();

    let stats = cmd_stats(&run).unwrap();
    assert_eq!(stats.robustness.configs.len(), 17);
    let golden_alpha: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("alpha.json")).unwrap()).unwrap();
    assert_eq!(stats.alpha[&quiet_core::ScaleKind::SixPoint], golden_alpha);

    // Re-scoring the main configuration from stored tables gives the same totals file.
    cmd_sensitivity(&SensitivityOptions { run_dir: run.clone(), configs: vec![ScoringConfig::MAIN] }).unwrap();
    assert_eq!(
        fs::read(run.join("sensitivity/final_scores.full.csv")).unwrap(),
        fs::read(run.join("final_scores.full.csv")).unwrap()
    );
}

#[test]
fn edited_testset_is_rejected_at_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cache = common::fixture_dir().join("cache");
    cmd_collect(&CollectOptions {
        testset: common::fixture_dir().join("testset.json"),
        models: common::configs("models.json"),
        mode: Mode::Replay,
        cache_dir: Some(cache.clone()),
        out: run.clone(),
        parallelism: 1,
        reveal_constraints: false,
    })
    .unwrap();
    let path = run.join("testset.json");
    let edited = fs::read_to_string(&path).unwrap().replace("night-archive-v1", "night-archive-v2");
    fs::write(&path, edited).unwrap();
    let err = cmd_score(&ScoreOptions {
        run_dir: run,
        judges: common::configs("judges.json"),
        embedding: common::configs("embedding.json").remove(0),
        mode: Mode::Replay,
        cache_dir: Some(cache),
        configs: vec![ScoringConfig::MAIN],
        parallelism: 1,
        exclude_from_centroid: BTreeSet::new(),
        embedding_text: EmbeddingText::Filling,
    })
    .unwrap_err();
    assert!(matches!(err, Error::InvalidTestSet(_)), "{err}");
}
