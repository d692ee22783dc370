use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::csvio::{self, field, number};
use super::report;
use super::score::{evaluate_configs, robustness, ScoreInputs};
use super::{load_run_testset, ArtifactWriter, RunArtifacts, RunManifest};
use crate::error::{Error, Result};
use crate::judge::{JudgeRecord, ScaleKind};
use crate::stats::{alpha_report, robustness_matrix, RobustnessMatrix, ScoringConfig};

fn read_judge_scores(path: &Path, scale: ScaleKind) -> Result<Vec<JudgeRecord>> {
    let what = path.display().to_string();
    let (_, rows) = csvio::read_file(path)?;
    rows.iter()
        .map(|row| {
            let knockout = match field(row, "knockout", &what)? {
                "true" => true,
                "false" => false,
                other => return Err(Error::MalformedTable(format!("{what}: knockout = {other:?}"))),
            };
            let group_id = field(row, "group_id", &what)?
                .parse()
                .map_err(|_| Error::MalformedTable(format!("{what}: bad group_id")))?;
            Ok(JudgeRecord {
                judge_id: field(row, "judge_id", &what)?.to_string(),
                model_id: field(row, "model_id", &what)?.to_string(),
                group_id,
                constraint_id: field(row, "constraint_id", &what)?.to_string(),
                scale,
                raw: number(row, "raw", &what)?,
                knockout_triggered: knockout,
                capped: number(row, "capped", &what)?,
            })
        })
        .collect()
}

fn scored_manifest(run_dir: &Path) -> Result<(RunManifest, ScaleKind)> {
    let manifest = RunManifest::load(run_dir)?
        .filter(|m| !m.configs.is_empty())
        .ok_or_else(|| Error::Config(format!("{} has not been scored yet", run_dir.display())))?;
    let main: ScoringConfig = manifest.configs[0].parse()?;
    Ok((manifest, main.scale))
}

/// Rebuilds scoring inputs from a scored run directory, without providers.
pub fn load_score_inputs(run_dir: &Path) -> Result<ScoreInputs> {
    let ts = load_run_testset(run_dir)?;
    let (_, main_scale) = scored_manifest(run_dir)?;
    let mut records = Vec::new();
    for scale in [ScaleKind::SixPoint, ScaleKind::ThreeTier] {
        let path = run_dir.join(report::judge_file(scale, main_scale));
        if path.exists() {
            records.extend(read_judge_scores(&path, scale)?);
        }
    }
    let path = run_dir.join(report::variant("surprise_groups.csv", true));
    let what = path.display().to_string();
    let (_, rows) = csvio::read_file(&path)?;
    let mut surprise: BTreeMap<u32, BTreeMap<String, f64>> = BTreeMap::new();
    for row in &rows {
        let g = field(row, "group_id", &what)?
            .parse()
            .map_err(|_| Error::MalformedTable(format!("{what}: bad group_id")))?;
        surprise
            .entry(g)
            .or_default()
            .insert(field(row, "model_id", &what)?.to_string(), number(row, "surprise", &what)?);
    }
    let models: BTreeSet<String> = surprise.values().flat_map(|m| m.keys().cloned()).collect();
    Ok(ScoreInputs { ts, models: models.into_iter().collect(), records, surprise })
}

#[derive(Debug, Clone)]
pub struct SensitivityOptions {
    pub run_dir: PathBuf,
    pub configs: Vec<ScoringConfig>,
}

/// Re-scores a run under a configuration grid using its stored judge
/// scores and surprise values. Output goes to `sensitivity/`.
pub fn cmd_sensitivity(opts: &SensitivityOptions) -> Result<RunArtifacts> {
    if opts.configs.is_empty() {
        return Err(Error::Config("no scoring configurations".into()));
    }
    let inputs = load_score_inputs(&opts.run_dir)?;
    let have: BTreeSet<ScaleKind> = inputs.records.iter().map(|r| r.scale).collect();
    if let Some(c) = opts.configs.iter().find(|c| !have.contains(&c.scale)) {
        return Err(Error::Config(format!(
            "configuration {c} needs {} judge scores, which this run does not have; \
             score the run with a {} configuration first",
            c.scale.as_str(),
            c.scale.as_str()
        )));
    }
    let results = evaluate_configs(&inputs, &opts.configs)?;
    let matrix = robustness(&results)?;
    let mut w = ArtifactWriter::new(&opts.run_dir)?;
    report::write_config_tables(&mut w, "sensitivity/", &inputs, &results, &matrix)?;
    let mut md = String::from("# Sensitivity\n\n");
    report::robustness_summary(&mut md, &results, &matrix);
    w.write("sensitivity/report.md", md.as_bytes())?;
    Ok(w.into_artifacts())
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub alpha: BTreeMap<ScaleKind, Value>,
    pub robustness: RobustnessMatrix,
}

/// Recomputes agreement and rank-robustness statistics from a scored run.
pub fn cmd_stats(run_dir: &Path) -> Result<StatsReport> {
    let (manifest, _) = scored_manifest(run_dir)?;
    let inputs = load_score_inputs(run_dir)?;
    let mut alpha = BTreeMap::new();
    for scale in [ScaleKind::SixPoint, ScaleKind::ThreeTier] {
        let recs: Vec<JudgeRecord> = inputs.records.iter().filter(|r| r.scale == scale).cloned().collect();
        if !recs.is_empty() {
            alpha.insert(scale, report::alpha_json(alpha_report(&recs, scale), scale));
        }
    }
    let mut totals = Vec::new();
    for id in &manifest.configs {
        let path = run_dir.join("configs").join(id).join(report::variant("final_scores.csv", true));
        let what = path.display().to_string();
        let (_, rows) = csvio::read_file(&path)?;
        let t = rows
            .iter()
            .map(|r| Ok((field(r, "model_id", &what)?.to_string(), number(r, "total", &what)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        totals.push((id.clone(), t));
    }
    Ok(StatsReport { alpha, robustness: robustness_matrix(&totals)? })
}
