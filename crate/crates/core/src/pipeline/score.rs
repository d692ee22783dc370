use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::collect::{interpret, ModelStatus, ResponseStatus};
use super::report::{self, Drop};
use super::{
    build_providers, load_response_files, load_run_testset, testset_digest, thread_pool, timestamp, validated,
    ArtifactWriter, ProviderSummary, RunArtifacts, RunManifest, Timestamps, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::judge::{self, JudgeRecord, ScaleKind};
use crate::providers::{Mode, Provider, ProviderConfig, RequestKind};
use crate::scoring::{leaderboard, model_total, GroupScore, ModelTotal};
use crate::stats::{alpha_report, robustness_matrix, RobustnessMatrix, ScoringConfig};
use crate::surprise::{surprise_table, BlankCohort, EmbeddingVector, SurpriseTable};
use crate::testset::{self, BlankId, FilledResponse, GroupId, TestSet};

/// Appended to a judge prompt whose first reply could not be read.
const REPROMPT_NOTE: &str = "\n\nYour previous reply could not be read. Reply again and end it with \
exactly the two lines described above.";

/// What gets embedded for each blank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingText {
    /// The filling alone.
    #[default]
    Filling,
    /// The filling inside the partial sentences around its blank.
    Context,
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub run_dir: PathBuf,
    pub judges: Vec<ProviderConfig>,
    pub embedding: ProviderConfig,
    pub mode: Mode,
    pub cache_dir: Option<PathBuf>,
    /// The first entry is the main configuration.
    pub configs: Vec<ScoringConfig>,
    pub parallelism: usize,
    pub exclude_from_centroid: BTreeSet<String>,
    pub embedding_text: EmbeddingText,
}

/// Everything the configuration grid needs; no provider access required.
#[derive(Debug, Clone)]
pub struct ScoreInputs {
    pub ts: TestSet,
    pub models: Vec<String>,
    pub records: Vec<JudgeRecord>,
    /// group -> model -> group surprise
    pub surprise: BTreeMap<GroupId, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone)]
pub struct ConfigResult {
    pub config: ScoringConfig,
    pub satisfy: BTreeMap<(String, GroupId), f64>,
    /// Ranked.
    pub board: Vec<ModelTotal>,
}

impl ConfigResult {
    pub fn totals(&self) -> BTreeMap<String, f64> {
        self.board.iter().map(|t| (t.model_id.clone(), t.total)).collect()
    }
}

pub fn evaluate_configs(inputs: &ScoreInputs, configs: &[ScoringConfig]) -> Result<Vec<ConfigResult>> {
    let groups = inputs.ts.group_ids();
    let mut satisfy_cache = BTreeMap::new();
    let mut out = Vec::new();
    for &config in configs {
        let key = (config.scale, config.aggregation.as_str());
        if !satisfy_cache.contains_key(&key) {
            let t = judge::satisfy_table(&inputs.ts, &inputs.records, config.scale, config.aggregation)?;
            satisfy_cache.insert(key, t);
        }
        let satisfy = &satisfy_cache[&key];
        let mut totals = Vec::new();
        for m in &inputs.models {
            let mut scores = Vec::new();
            for &g in &groups {
                let missing = || Error::MissingGroup { model: m.clone(), group: g };
                let s = *satisfy.get(&(m.clone(), g)).ok_or_else(missing)?;
                let u = *inputs.surprise.get(&g).and_then(|row| row.get(m)).ok_or_else(missing)?;
                scores.push(GroupScore::new(m, g, s, u, config.scheme));
            }
            totals.push(model_total(m, &scores, &groups)?);
        }
        out.push(ConfigResult { config, satisfy: satisfy.clone(), board: leaderboard(totals) });
    }
    Ok(out)
}

pub(crate) fn robustness(results: &[ConfigResult]) -> Result<RobustnessMatrix> {
    let totals: Vec<(String, BTreeMap<String, f64>)> =
        results.iter().map(|r| (r.config.id(), r.totals())).collect();
    robustness_matrix(&totals)
}

enum Outcome {
    Record(JudgeRecord),
    Dropped(Drop),
}

struct JudgeTask<'a> {
    scale: ScaleKind,
    model: &'a str,
    group: GroupId,
    constraint: &'a testset::Constraint,
    judge: &'a Provider,
    passage: &'a str,
}

fn run_judge_task(t: &JudgeTask<'_>) -> Result<Outcome> {
    let prompt = judge::build_judge_prompt(t.passage, t.constraint, t.scale)?;
    let mut reply = t.judge.chat_complete(&prompt)?;
    let mut parsed = judge::parse_judge_output(&reply, t.scale);
    if parsed.is_err() {
        reply = t.judge.chat_complete(&format!("{prompt}{REPROMPT_NOTE}"))?;
        parsed = judge::parse_judge_output(&reply, t.scale);
    }
    let judge_id = t.judge.config().name.clone();
    Ok(match parsed {
        Ok((raw, knockout)) => {
            // Knockout only applies where the test set declares one.
            let triggered = knockout && t.constraint.knockout;
            Outcome::Record(JudgeRecord {
                judge_id,
                model_id: t.model.to_string(),
                group_id: t.group,
                constraint_id: t.constraint.constraint_id.clone(),
                scale: t.scale,
                raw,
                knockout_triggered: triggered,
                capped: judge::apply_knockout(raw, triggered, t.scale),
            })
        }
        Err(e) => Outcome::Dropped(Drop {
            scale: t.scale,
            judge_id,
            model_id: t.model.to_string(),
            group_id: t.group,
            item: t.constraint.constraint_id.clone(),
            reason: e.to_string(),
        }),
    })
}

fn judge_stage(
    pool: &rayon::ThreadPool,
    ts: &TestSet,
    responses: &[FilledResponse],
    judges: &[Provider],
    scales: &[ScaleKind],
) -> Result<(Vec<JudgeRecord>, Vec<Drop>)> {
    let mut passages = BTreeMap::new();
    for r in responses {
        for g in &ts.groups {
            passages.insert((r.model_id.as_str(), g.group_id), testset::group_passage(ts, &r.fillings, g.group_id)?);
        }
    }
    let mut tasks = Vec::new();
    for &scale in scales {
        for r in responses {
            for g in &ts.groups {
                for c in &g.constraints {
                    for judge in judges {
                        tasks.push(JudgeTask {
                            scale,
                            model: &r.model_id,
                            group: g.group_id,
                            constraint: c,
                            judge,
                            passage: &passages[&(r.model_id.as_str(), g.group_id)],
                        });
                    }
                }
            }
        }
    }
    let outcomes: Vec<Result<Outcome>> = pool.install(|| tasks.par_iter().map(run_judge_task).collect());
    let mut records = Vec::new();
    let mut drops = Vec::new();
    for o in outcomes {
        match o? {
            Outcome::Record(r) => records.push(r),
            Outcome::Dropped(d) => {
                log::warn!("judge {} dropped for {} G{} {}: {}", d.judge_id, d.model_id, d.group_id, d.item, d.reason);
                drops.push(d)
            }
        }
    }
    // A triple fails only if every judge dropped.
    let covered: BTreeSet<(ScaleKind, &str, GroupId, &str)> = records
        .iter()
        .map(|r| (r.scale, r.model_id.as_str(), r.group_id, r.constraint_id.as_str()))
        .collect();
    for t in &tasks {
        if !covered.contains(&(t.scale, t.model, t.group, t.constraint.constraint_id.as_str())) {
            return Err(Error::EnsembleFailure {
                model: t.model.to_string(),
                group: t.group,
                constraint: t.constraint.constraint_id.clone(),
            });
        }
    }
    Ok((records, drops))
}

fn cascade_stage(
    pool: &rayon::ThreadPool,
    ts: &TestSet,
    responses: &[FilledResponse],
    judges: &[Provider],
    scale: ScaleKind,
) -> Result<(Vec<judge::CascadeScore>, Vec<Drop>)> {
    let mut tasks = Vec::new();
    for r in responses {
        for e in &ts.edges {
            for j in judges {
                tasks.push((r, e, j));
            }
        }
    }
    let results: Vec<Result<judge::CascadeScore>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(r, e, j)| judge::cascade_consistency(ts, r, e, *j, scale))
            .collect()
    });
    let mut scores = Vec::new();
    let mut drops = Vec::new();
    for ((r, e, j), res) in tasks.iter().zip(results) {
        match res {
            Ok(s) => scores.push(s),
            Err(err @ (Error::NoScoreLine { .. } | Error::OutOfDomain { .. })) => drops.push(Drop {
                scale,
                judge_id: j.config().name.clone(),
                model_id: r.model_id.clone(),
                group_id: e.to_group,
                item: format!("edge G{}->G{}", e.from_group, e.to_group),
                reason: err.to_string(),
            }),
            Err(err) => return Err(err),
        }
    }
    Ok((scores, drops))
}

fn surprise_stage(
    pool: &rayon::ThreadPool,
    ts: &TestSet,
    responses: &[FilledResponse],
    embedder: &Provider,
    text: EmbeddingText,
    excluded: &BTreeSet<String>,
) -> Result<SurpriseTable> {
    let mut tasks: Vec<(BlankId, &str, String)> = Vec::new();
    for k in ts.blank_ids() {
        for r in responses {
            if let Some(f) = r.fillings.get(&k).filter(|f| !f.trim().is_empty()) {
                let t = match text {
                    EmbeddingText::Filling => f.clone(),
                    EmbeddingText::Context => testset::blank_context_text(ts, f, k)?,
                };
                tasks.push((k, &r.model_id, t));
            }
        }
    }
    let vectors: Vec<Result<EmbeddingVector>> =
        pool.install(|| tasks.par_iter().map(|(_, _, t)| embedder.embed(t)).collect());
    let mut by_blank: BTreeMap<BlankId, BTreeMap<String, EmbeddingVector>> = BTreeMap::new();
    for ((k, m, _), v) in tasks.iter().zip(vectors) {
        by_blank.entry(*k).or_default().insert(m.to_string(), v?);
    }
    let cohorts = by_blank
        .into_iter()
        .map(|(k, raw)| BlankCohort::from_raw(k, raw))
        .collect::<Result<Vec<_>>>()?;
    let models: BTreeSet<String> = responses.iter().map(|r| r.model_id.clone()).collect();
    surprise_table(ts, &cohorts, &models, excluded)
}

/// Loads transcripts from a run directory, parsing raw text where no
/// fillings were stored.
pub(crate) fn load_responses(ts: &TestSet, run_dir: &std::path::Path) -> Result<(Vec<FilledResponse>, Vec<ModelStatus>)> {
    let mut responses = Vec::new();
    let mut flags = Vec::new();
    for f in load_response_files(run_dir)? {
        let (fillings, status) = match (&f.fillings, &f.raw_text) {
            (Some(fillings), _) => {
                let blanks = ts.blank_ids();
                if let Some(k) = fillings.keys().find(|k| !blanks.contains(k)) {
                    return Err(Error::UnknownBlankTag(*k));
                }
                let fillings: BTreeMap<BlankId, String> =
                    fillings.iter().filter(|(_, v)| !v.trim().is_empty()).map(|(k, v)| (*k, v.clone())).collect();
                let missing: Vec<BlankId> = blanks.into_iter().filter(|k| !fillings.contains_key(k)).collect();
                let status = ModelStatus {
                    model_id: f.model_id.clone(),
                    status: if missing.is_empty() { ResponseStatus::Complete } else { ResponseStatus::Incomplete },
                    missing,
                    aligned: f.aligned,
                    error: None,
                };
                (fillings, status)
            }
            (None, Some(raw)) => {
                let (file, status) = interpret(ts, &f.model_id, raw);
                (file.fillings.unwrap_or_default(), status)
            }
            (None, None) => {
                return Err(Error::Config(format!("transcript for {} has neither raw_text nor fillings", f.model_id)))
            }
        };
        if status.status != ResponseStatus::Complete {
            flags.push(status);
        }
        responses.push(FilledResponse { model_id: f.model_id, fillings });
    }
    Ok((responses, flags))
}

fn scales_of(configs: &[ScoringConfig]) -> Vec<ScaleKind> {
    let mut scales = Vec::new();
    for c in configs {
        if !scales.contains(&c.scale) {
            scales.push(c.scale);
        }
    }
    scales
}

/// Judges and embeds a collected run, then writes every table for every
/// configuration. Replay runs are byte-reproducible.
pub fn cmd_score(opts: &ScoreOptions) -> Result<RunArtifacts> {
    let Some(&main) = opts.configs.first() else {
        return Err(Error::Config("no scoring configurations".into()));
    };
    if opts.judges.is_empty() {
        return Err(Error::Config("no judges configured".into()));
    }
    if opts.judges.iter().any(|j| j.kind != RequestKind::Chat) {
        return Err(Error::Config("judges must be chat backends".into()));
    }
    if opts.embedding.kind != RequestKind::Embedding {
        return Err(Error::Config(format!("{:?} is not an embedding backend", opts.embedding.name)));
    }
    let ts = validated(load_run_testset(&opts.run_dir)?)?;
    let (responses, flags) = load_responses(&ts, &opts.run_dir)?;
    let models: Vec<String> = responses.iter().map(|r| r.model_id.clone()).collect();
    if let Some(x) = opts.exclude_from_centroid.iter().find(|x| !models.contains(x)) {
        return Err(Error::Config(format!("--exclude-from-centroid names unknown model {x:?}")));
    }

    let digest = testset_digest(&ts);
    let previous = RunManifest::load(&opts.run_dir)?;
    if let Some(p) = &previous {
        if p.testset_digest != digest {
            return Err(Error::InvalidTestSet(vec![format!(
                "testset.json digest {digest} does not match manifest digest {}",
                p.testset_digest
            )]));
        }
    }
    let mut manifest = RunManifest {
        run_id: String::new(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        testset_id: ts.id.clone(),
        testset_digest: digest,
        models: previous.as_ref().map(|p| p.models.clone()).unwrap_or_else(|| {
            models
                .iter()
                .map(|m| ProviderSummary { name: m.clone(), model: m.clone(), api: Default::default(), endpoint: String::new() })
                .collect()
        }),
        collect_mode: previous.as_ref().and_then(|p| p.collect_mode),
        reveal_constraints: previous.as_ref().is_some_and(|p| p.reveal_constraints),
        judges: opts.judges.iter().map(ProviderSummary::from).collect(),
        embedding: Some(ProviderSummary::from(&opts.embedding)),
        embedding_text: Some(opts.embedding_text),
        score_mode: Some(opts.mode),
        configs: opts.configs.iter().map(ScoringConfig::id).collect(),
        exclude_from_centroid: opts.exclude_from_centroid.iter().cloned().collect(),
        parallelism: opts.parallelism,
        timestamps: Timestamps {
            collected_at: previous.as_ref().and_then(|p| p.timestamps.collected_at.clone()),
            scored_at: timestamp(opts.mode),
        },
    };
    manifest.run_id = manifest.compute_run_id();

    let judges = build_providers(&opts.judges, opts.mode, opts.cache_dir.as_deref())?;
    let embedder = build_providers(std::slice::from_ref(&opts.embedding), opts.mode, opts.cache_dir.as_deref())?
        .pop()
        .expect("one provider");

    let mut w = ArtifactWriter::new(&opts.run_dir)?;
    w.write_json(MANIFEST_FILE, &manifest)?;

    let pool = thread_pool(opts.parallelism)?;
    let scales = scales_of(&opts.configs);
    let (records, mut drops) = judge_stage(&pool, &ts, &responses, &judges, &scales)?;
    let (cascade, cascade_drops) = cascade_stage(&pool, &ts, &responses, &judges, main.scale)?;
    drops.extend(cascade_drops);
    let surprise = surprise_stage(&pool, &ts, &responses, &embedder, opts.embedding_text, &opts.exclude_from_centroid)?;

    let inputs = ScoreInputs { ts, models, records, surprise: surprise.groups.clone() };
    let results = evaluate_configs(&inputs, &opts.configs)?;
    let matrix = robustness(&results)?;

    let mut alphas = Vec::new();
    for &scale in &scales {
        let file = report::alpha_file(scale, main.scale);
        let scale_records: Vec<JudgeRecord> = inputs.records.iter().filter(|r| r.scale == scale).cloned().collect();
        let value = report::alpha_json(alpha_report(&scale_records, scale), scale);
        w.write_json(&file, &value)?;
        alphas.push((scale, value));
        let (h, rows) = report::judge_rows(&scale_records);
        w.write_csv(&report::judge_file(scale, main.scale), &h, &rows)?;
    }
    let (h, rows) = report::drop_rows(&drops);
    w.write_csv("judge_drops.csv", &h, &rows)?;
    let (h, rows) = report::cascade_rows(&cascade);
    w.write_csv("cascade.csv", &h, &rows)?;
    for full in [false, true] {
        let (h, rows) = report::surprise_blank_rows(&surprise, full);
        w.write_csv(&report::variant("surprise_blanks.csv", full), &h, &rows)?;
        let (h, rows) = report::surprise_group_rows(&surprise, full);
        w.write_csv(&report::variant("surprise_groups.csv", full), &h, &rows)?;
    }
    report::write_config_tables(&mut w, "", &inputs, &results, &matrix)?;
    let md = report::markdown(&report::Summary {
        manifest: &manifest,
        inputs: &inputs,
        flags: &flags,
        results: &results,
        matrix: &matrix,
        alphas: &alphas,
        drops: &drops,
        cascade: &cascade,
    });
    w.write("report.md", md.as_bytes())?;
    w.finish(&manifest.run_id)
}
