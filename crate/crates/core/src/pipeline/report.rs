//! Table and summary emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::{json, Value};

use super::collect::{ModelStatus, ResponseStatus};
use super::score::{ConfigResult, ScoreInputs};
use super::{fmt_dp, fmt_full, ArtifactWriter, RunManifest};
use crate::error::Result;
use crate::judge::{CascadeScore, JudgeRecord, ScaleKind};
use crate::stats::{AlphaReport, RobustnessMatrix, ScoringConfig};
use crate::surprise::SurpriseTable;
use crate::testset::GroupId;

/// A judge reply that could not be used, even after one reprompt.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Drop {
    pub scale: ScaleKind,
    pub judge_id: String,
    pub model_id: String,
    pub group_id: GroupId,
    pub item: String,
    pub reason: String,
}

fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub(crate) fn variant(name: &str, full: bool) -> String {
    match (full, name.rsplit_once('.')) {
        (true, Some((stem, ext))) => format!("{stem}.full.{ext}"),
        _ => name.to_string(),
    }
}

fn per_scale(base: &str, ext: &str, scale: ScaleKind, main: ScaleKind) -> String {
    if scale == main {
        format!("{base}.{ext}")
    } else {
        format!("{base}.{}.{ext}", scale.as_str())
    }
}

pub(crate) fn alpha_file(scale: ScaleKind, main: ScaleKind) -> String {
    per_scale("alpha", "json", scale, main)
}

pub(crate) fn judge_file(scale: ScaleKind, main: ScaleKind) -> String {
    per_scale("judge_scores", "csv", scale, main)
}

pub(crate) fn alpha_json(r: Result<AlphaReport>, scale: ScaleKind) -> Value {
    match r {
        Ok(a) => serde_json::to_value(a).expect("alpha reports serialize"),
        Err(e) => json!({ "alpha": null, "error": e.to_string(), "metric": "interval", "scale": scale }),
    }
}

pub(crate) const JUDGE_HEADER: [&str; 8] =
    ["judge_id", "model_id", "group_id", "constraint_id", "raw", "knockout", "capped", "normalized"];

pub(crate) fn judge_rows(records: &[JudgeRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = records
        .iter()
        .map(|r| {
            vec![
                r.judge_id.clone(),
                r.model_id.clone(),
                r.group_id.to_string(),
                r.constraint_id.clone(),
                fmt_full(r.raw),
                r.knockout_triggered.to_string(),
                fmt_full(r.capped),
                fmt_full(r.normalized()),
            ]
        })
        .collect();
    (strings(JUDGE_HEADER), rows)
}

pub(crate) fn drop_rows(drops: &[Drop]) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = drops
        .iter()
        .map(|d| {
            vec![
                d.scale.as_str().to_string(),
                d.judge_id.clone(),
                d.model_id.clone(),
                d.group_id.to_string(),
                d.item.clone(),
                d.reason.clone(),
            ]
        })
        .collect();
    (strings(["scale", "judge_id", "model_id", "group_id", "item", "reason"]), rows)
}

pub(crate) fn cascade_rows(scores: &[CascadeScore]) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = scores
        .iter()
        .map(|s| {
            vec![
                s.model_id.clone(),
                s.judge_id.clone(),
                s.from_group.to_string(),
                s.to_group.to_string(),
                fmt_full(s.value),
            ]
        })
        .collect();
    (strings(["model_id", "judge_id", "from_group", "to_group", "value"]), rows)
}

fn num(x: f64, dp: usize, full: bool) -> String {
    if full {
        fmt_full(x)
    } else {
        fmt_dp(x, dp)
    }
}

pub(crate) fn surprise_blank_rows(t: &SurpriseTable, full: bool) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    for (k, row) in &t.blanks {
        for (m, n) in &row.normalized {
            let raw = row.raw.get(m).map(|r| num(*r, 3, full)).unwrap_or_else(|| "NA".into());
            rows.push(vec![k.to_string(), m.clone(), raw, num(*n, 3, full)]);
        }
    }
    (strings(["blank_id", "model_id", "raw_distance", "surprise"]), rows)
}

pub(crate) fn surprise_group_rows(t: &SurpriseTable, full: bool) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    for (g, per_model) in &t.groups {
        for (m, u) in per_model {
            rows.push(vec![g.to_string(), m.clone(), num(*u, 3, full)]);
        }
    }
    (strings(["group_id", "model_id", "surprise"]), rows)
}

fn group_header(lead: &[&str], groups: &[GroupId], tail: &[&str]) -> Vec<String> {
    lead.iter()
        .map(|s| s.to_string())
        .chain(groups.iter().map(|g| format!("g{g}")))
        .chain(tail.iter().map(|s| s.to_string()))
        .collect()
}

fn table1(r: &ConfigResult, groups: &[GroupId], full: bool) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = r
        .board
        .iter()
        .map(|t| {
            let mut row = vec![t.rank.to_string(), t.model_id.clone()];
            row.extend(groups.iter().map(|g| num(r.satisfy[&(t.model_id.clone(), *g)], 2, full)));
            row.push(num(t.satisfy_mean, 3, full));
            row
        })
        .collect();
    (group_header(&["rank", "model_id"], groups, &["mean"]), rows)
}

fn table2(inputs: &ScoreInputs, groups: &[GroupId], full: bool) -> (Vec<String>, Vec<Vec<String>>) {
    let mut means: Vec<(String, f64)> = inputs
        .models
        .iter()
        .map(|m| {
            let sum: f64 = groups.iter().map(|g| inputs.surprise[g][m]).sum();
            (m.clone(), sum / groups.len().max(1) as f64)
        })
        .collect();
    means.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let rows = means
        .iter()
        .enumerate()
        .map(|(i, (m, mean))| {
            let mut row = vec![(i + 1).to_string(), m.clone()];
            row.extend(groups.iter().map(|g| num(inputs.surprise[g][m], 3, full)));
            row.push(num(*mean, 3, full));
            row
        })
        .collect();
    (group_header(&["rank", "model_id"], groups, &["mean"]), rows)
}

fn final_scores(r: &ConfigResult, groups: &[GroupId], full: bool) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = r
        .board
        .iter()
        .map(|t| {
            let mut row = vec![
                t.rank.to_string(),
                t.model_id.clone(),
                num(t.satisfy_mean, 3, full),
                num(t.surprise_mean, 3, full),
                num(t.total, 2, full),
            ];
            row.extend(t.groups.iter().map(|g| num(g.composite, 2, full)));
            row
        })
        .collect();
    (group_header(&["rank", "model_id", "satisfy_mean", "surprise_mean", "total"], groups, &[]), rows)
}

fn spearman_rows(m: &RobustnessMatrix) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["config".to_string()];
    header.extend(m.configs.iter().cloned());
    let rows = m
        .configs
        .iter()
        .zip(&m.cells)
        .map(|(id, cells)| {
            let mut row = vec![id.clone()];
            row.extend(cells.iter().map(|c| c.map(|x| fmt_dp(x, 3)).unwrap_or_else(|| "NA".into())));
            row
        })
        .collect();
    (header, rows)
}

/// Main-configuration tables at `prefix`, one `final_scores` pair per
/// configuration, and the robustness matrix.
pub(crate) fn write_config_tables(
    w: &mut ArtifactWriter,
    prefix: &str,
    inputs: &ScoreInputs,
    results: &[ConfigResult],
    matrix: &RobustnessMatrix,
) -> Result<()> {
    let groups = inputs.ts.group_ids();
    let main = &results[0];
    for full in [false, true] {
        let (h, rows) = table1(main, &groups, full);
        w.write_csv(&format!("{prefix}{}", variant("table1_satisfy.csv", full)), &h, &rows)?;
        let (h, rows) = table2(inputs, &groups, full);
        w.write_csv(&format!("{prefix}{}", variant("table2_surprise.csv", full)), &h, &rows)?;
        let (h, rows) = final_scores(main, &groups, full);
        w.write_csv(&format!("{prefix}{}", variant("final_scores.csv", full)), &h, &rows)?;
        for r in results {
            let (h, rows) = final_scores(r, &groups, full);
            let name = format!("{prefix}configs/{}/{}", r.config.id(), variant("final_scores.csv", full));
            w.write_csv(&name, &h, &rows)?;
        }
    }
    let (h, rows) = spearman_rows(matrix);
    w.write_csv(&format!("{prefix}final_scores.spearman.csv"), &h, &rows)
}

pub(crate) struct Summary<'a> {
    pub manifest: &'a RunManifest,
    pub inputs: &'a ScoreInputs,
    pub flags: &'a [ModelStatus],
    pub results: &'a [ConfigResult],
    pub matrix: &'a RobustnessMatrix,
    pub alphas: &'a [(ScaleKind, Value)],
    pub drops: &'a [Drop],
    pub cascade: &'a [CascadeScore],
}

fn names(xs: &[super::ProviderSummary]) -> String {
    xs.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", ")
}

pub(crate) fn robustness_summary(out: &mut String, results: &[ConfigResult], matrix: &RobustnessMatrix) {
    let n = matrix.configs.len();
    let defined: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter_map(|(i, j)| matrix.get(i, j))
        .collect();
    let undefined = n * n.saturating_sub(1) / 2 - defined.len();
    let _ = writeln!(out, "Configurations: {n}.");
    if results.iter().map(|r| r.config).eq(ScoringConfig::default_grid()) {
        let _ = writeln!(out, "The default grid is a reconstruction, not a published configuration list.");
    }
    if !defined.is_empty() {
        let min = defined.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = defined.iter().sum::<f64>() / defined.len() as f64;
        let _ = writeln!(
            out,
            "Pairwise Spearman rho over {} pairs: min {}, mean {}.",
            defined.len(),
            fmt_dp(min, 3),
            fmt_dp(mean, 3)
        );
    }
    if undefined > 0 {
        let _ = writeln!(out, "Undefined pairs (constant totals): {undefined}.");
    }
    let _ = writeln!(out, "\n| Configuration | Leader | rho vs main |\n|---|---|---|");
    for (i, r) in results.iter().enumerate() {
        let rho = matrix.get(0, i).map(|x| fmt_dp(x, 3)).unwrap_or_else(|| "NA".into());
        let leader = r.board.first().map(|t| t.model_id.as_str()).unwrap_or("");
        let _ = writeln!(out, "| {} | {leader} | {rho} |", r.config.id());
    }
}

pub(crate) fn markdown(s: &Summary<'_>) -> String {
    let ts = &s.inputs.ts;
    let main = &s.results[0];
    let mut out = String::new();
    let _ = writeln!(out, "# Run {}\n", s.manifest.run_id);
    let _ = writeln!(
        out,
        "Test set `{}`: {} blanks, {} groups, {} constraints, {} cascade edges (digest `{}`).",
        ts.id,
        ts.blank_count(),
        ts.groups.len(),
        ts.constraint_count(),
        ts.edges.len(),
        &s.manifest.testset_digest[..12]
    );
    let _ = writeln!(out, "Models: {}.", s.inputs.models.join(", "));
    let _ = writeln!(out, "Judges: {}.", names(&s.manifest.judges));
    if let Some(e) = &s.manifest.embedding {
        let text = match s.manifest.embedding_text {
            Some(super::EmbeddingText::Context) => "filling in sentence context",
            _ => "filling only",
        };
        let _ = writeln!(out, "Embedding: {} ({text}).", e.name);
    }
    if !s.manifest.exclude_from_centroid.is_empty() {
        let _ = writeln!(out, "Excluded from centroids: {}.", s.manifest.exclude_from_centroid.join(", "));
    }
    let _ = writeln!(out, "Main configuration: {}.\n", main.config.id());

    let _ = writeln!(out, "## Flags\n");
    if s.flags.is_empty() {
        let _ = writeln!(out, "All responses complete.\n");
    }
    for f in s.flags {
        let blanks = f.missing.iter().map(|k| format!("{k:02}")).collect::<Vec<_>>().join(", ");
        let what = match f.status {
            ResponseStatus::Complete => continue,
            ResponseStatus::Incomplete => "**INCOMPLETE**",
            ResponseStatus::Unparsed => "**UNPARSED**",
        };
        let _ = writeln!(
            out,
            "- {what} {}: blanks {blanks} missing. Surprise is 0 there and judges saw a placeholder.",
            f.model_id
        );
    }
    if !s.flags.is_empty() {
        out.push('\n');
    }

    let _ = writeln!(out, "## Leaderboard ({})\n", main.config.id());
    let _ = writeln!(out, "| Rank | Model | Satisfy mean | Surprise mean | Total |\n|---|---|---|---|---|");
    for t in &main.board {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            t.rank,
            t.model_id,
            fmt_dp(t.satisfy_mean, 3),
            fmt_dp(t.surprise_mean, 3),
            fmt_dp(t.total, 2)
        );
    }
    if let Some(l) = main.config.scheme.lambda() {
        let max = (1.0 + l) * ts.groups.len() as f64;
        let _ = writeln!(out, "\nMaximum possible total: {}.", fmt_dp(max, 1));
    }

    let _ = writeln!(out, "\n## Judge agreement\n");
    for (scale, v) in s.alphas {
        match v.get("alpha").and_then(Value::as_f64) {
            Some(a) => {
                let _ = writeln!(
                    out,
                    "- {}: Krippendorff alpha (interval) = {} over {} items and {} judges; \
                     mean squared difference within items {}, between items {}.",
                    scale.as_str(),
                    fmt_dp(a, 3),
                    v["n_items"],
                    v["n_raters"],
                    fmt_dp(v["within_item"].as_f64().unwrap_or(f64::NAN), 3),
                    fmt_dp(v["between_item"].as_f64().unwrap_or(f64::NAN), 3)
                );
            }
            None => {
                let _ = writeln!(out, "- {}: alpha undefined ({}).", scale.as_str(), v["error"].as_str().unwrap_or(""));
            }
        }
    }
    let _ = writeln!(out, "- Dropped judge replies: {}.", s.drops.len());

    if !s.cascade.is_empty() {
        let _ = writeln!(out, "\n## Cascade consistency\n");
        let _ = writeln!(out, "Reported for reference; not part of any total.\n");
        let _ = writeln!(out, "| Model | Mean | Judgments |\n|---|---|---|");
        let mut by_model: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for c in s.cascade {
            by_model.entry(&c.model_id).or_default().push(c.value);
        }
        for (m, v) in by_model {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let _ = writeln!(out, "| {m} | {} | {} |", fmt_dp(mean, 3), v.len());
        }
    }

    let _ = writeln!(out, "\n## Sensitivity\n");
    robustness_summary(&mut out, s.results, s.matrix);
    out
}
