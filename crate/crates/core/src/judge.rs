//! Constraint-satisfaction scoring by an ensemble of LLM judges.
//!
//! Judges see a group passage and one constraint, answer on a fixed scale
//! and flag knockout violations. The pipeline caps knocked-out scores,
//! normalizes to [0, 1], averages across judges per constraint, then folds
//! constraints into a group value (soft mean or bucket minimum).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::ChatBackend;
use crate::testset::{self, CascadeEdge, Constraint, FilledResponse, GroupId, TestSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    SixPoint,
    ThreeTier,
}

const SIX_POINT_ANCHORS: [&str; 6] = [
    "0 = completely absent or conflicts with constraint",
    "1 = only sparse traces",
    "2 = halfway there",
    "3 = largely satisfied but with minor flaws",
    "4 = fully satisfied without flaws",
    "5 = fully satisfied and elegantly executed",
];

const THREE_TIER_ANCHORS: [&str; 3] = [
    "0 = not satisfied",
    "0.5 = partially satisfied",
    "1.0 = fully satisfied",
];

impl ScaleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScaleKind::SixPoint => "six_point",
            ScaleKind::ThreeTier => "three_tier",
        }
    }

    pub fn anchors(self) -> &'static [&'static str] {
        match self {
            ScaleKind::SixPoint => &SIX_POINT_ANCHORS,
            ScaleKind::ThreeTier => &THREE_TIER_ANCHORS,
        }
    }

    pub fn contains(self, v: f64) -> bool {
        match self {
            ScaleKind::SixPoint => (0.0..=5.0).contains(&v) && v.fract() == 0.0,
            ScaleKind::ThreeTier => v == 0.0 || v == 0.5 || v == 1.0,
        }
    }

    /// Highest score a knocked-out answer may keep.
    pub fn knockout_cap(self) -> f64 {
        match self {
            ScaleKind::SixPoint => 1.0,
            ScaleKind::ThreeTier => 0.5,
        }
    }

    pub fn max(self) -> f64 {
        match self {
            ScaleKind::SixPoint => 5.0,
            ScaleKind::ThreeTier => 1.0,
        }
    }

    pub fn normalize(self, v: f64) -> f64 {
        v / self.max()
    }

    /// Every admissible value, ascending.
    pub fn domain(self) -> Vec<f64> {
        match self {
            ScaleKind::SixPoint => (0..=5).map(f64::from).collect(),
            ScaleKind::ThreeTier => vec![0.0, 0.5, 1.0],
        }
    }
}

impl fmt::Display for ScaleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScaleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "six_point" | "6pt" => Ok(ScaleKind::SixPoint),
            "three_tier" | "3tier" => Ok(ScaleKind::ThreeTier),
            _ => Err(Error::Config(format!("unknown scale {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    SoftMean,
    Bucket,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::SoftMean => "soft_mean",
            Aggregation::Bucket => "bucket",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub judge_id: String,
    pub model_id: String,
    pub group_id: GroupId,
    pub constraint_id: String,
    pub scale: ScaleKind,
    pub raw: f64,
    pub knockout_triggered: bool,
    pub capped: f64,
}

impl JudgeRecord {
    pub fn normalized(&self) -> f64 {
        self.scale.normalize(self.capped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintScore {
    pub model_id: String,
    pub group_id: GroupId,
    pub constraint_id: String,
    pub value: f64,
    pub judges: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSatisfy {
    pub model_id: String,
    pub group_id: GroupId,
    pub value: f64,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeScore {
    pub model_id: String,
    pub judge_id: String,
    pub from_group: GroupId,
    pub to_group: GroupId,
    pub value: f64,
}

fn push_scale_block(out: &mut String, scale: ScaleKind) {
    out.push_str("Score on this scale:\n");
    for a in scale.anchors() {
        out.push_str(a);
        out.push('\n');
    }
}

fn push_output_format(out: &mut String, scale: ScaleKind) {
    let example = match scale {
        ScaleKind::SixPoint => "4",
        ScaleKind::ThreeTier => "0.5",
    };
    out.push_str(&format!(
        "\nYou may explain your reasoning first. End your reply with exactly two lines:\n\
         SCORE: <value>   (for example SCORE: {example})\n\
         KNOCKOUT: yes|no\n"
    ));
}

pub fn build_judge_prompt(passage: &str, c: &Constraint, scale: ScaleKind) -> Result<String> {
    if passage.trim().is_empty() || c.text.trim().is_empty() {
        return Err(Error::Precondition(
            "judge prompt needs a non-empty passage and constraint".into(),
        ));
    }
    let mut out = String::new();
    out.push_str(
        "You are grading whether a story passage satisfies a content constraint. \
         Judge the logic of the content, not the quality of the prose.\n\n",
    );
    out.push_str("Passage:\n\"\"\"\n");
    out.push_str(passage);
    out.push_str("\n\"\"\"\n\nConstraint:\n");
    out.push_str(&c.text);
    out.push_str("\n\n");
    push_scale_block(&mut out, scale);
    if c.knockout {
        out.push_str(&format!(
            "\nKnockout rule: this constraint states mandatory requirements (such as \
             \"must\", \"cannot\", \"not allowed\", or conditions joined by \"and\"). \
             If the passage violates any of them, answer KNOCKOUT: yes and give at most \
             {} no matter how well the rest is written. Otherwise answer KNOCKOUT: no.\n",
            fmt_value(scale.knockout_cap())
        ));
    } else {
        out.push_str("\nThis constraint has no knockout rule; answer KNOCKOUT: no.\n");
    }
    push_output_format(&mut out, scale);
    Ok(out)
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// Extracts the last `SCORE:` and `KNOCKOUT:` lines from a judge transcript.
pub fn parse_judge_output(text: &str, scale: ScaleKind) -> Result<(f64, bool)> {
    let field = |name: &str| {
        text.lines().rev().find_map(|line| {
            let line = line.trim().trim_start_matches(['*', '#', '-', ' ']);
            let (key, value) = line.split_once(':')?;
            key.trim()
                .eq_ignore_ascii_case(name)
                .then(|| value.trim().trim_matches(['*', '`', ' ']).to_string())
        })
    };
    let score = field("SCORE").ok_or_else(|| Error::NoScoreLine {
        transcript: text.to_string(),
    })?;
    let value: f64 = score.parse().map_err(|_| Error::OutOfDomain {
        value: score.clone(),
        scale: scale.as_str(),
        transcript: text.to_string(),
    })?;
    if !scale.contains(value) {
        return Err(Error::OutOfDomain {
            value: score,
            scale: scale.as_str(),
            transcript: text.to_string(),
        });
    }
    let knockout = field("KNOCKOUT")
        .map(|v| v.to_ascii_lowercase().starts_with('y'))
        .unwrap_or(false);
    Ok((value, knockout))
}

pub fn apply_knockout(raw: f64, triggered: bool, scale: ScaleKind) -> f64 {
    if triggered {
        raw.min(scale.knockout_cap())
    } else {
        raw
    }
}

/// Mean of normalized capped scores for one (model, group, constraint) triple.
pub fn ensemble_constraint_score(records: &[JudgeRecord]) -> Result<ConstraintScore> {
    let first = records.first().ok_or(Error::EmptyRecords)?;
    let same_triple = records.iter().all(|r| {
        r.model_id == first.model_id
            && r.group_id == first.group_id
            && r.constraint_id == first.constraint_id
            && r.scale == first.scale
    });
    if !same_triple {
        return Err(Error::MixedRecords);
    }
    let value = records.iter().map(JudgeRecord::normalized).sum::<f64>() / records.len() as f64;
    Ok(ConstraintScore {
        model_id: first.model_id.clone(),
        group_id: first.group_id,
        constraint_id: first.constraint_id.clone(),
        value,
        judges: records.iter().map(|r| r.judge_id.clone()).collect(),
    })
}

/// Folds one group's constraint scores. `expected` lists the constraint ids
/// the group must have a score for.
pub fn group_satisfy(
    scores: &[ConstraintScore],
    expected: &[String],
    agg: Aggregation,
) -> Result<GroupSatisfy> {
    let have: BTreeSet<&str> = scores.iter().map(|s| s.constraint_id.as_str()).collect();
    if let Some(missing) = expected.iter().find(|c| !have.contains(c.as_str())) {
        return Err(Error::MissingConstraintScore(missing.clone()));
    }
    let first = scores.first().ok_or(Error::EmptyRecords)?;
    let values = scores.iter().map(|s| s.value);
    let value = match agg {
        Aggregation::SoftMean => values.sum::<f64>() / scores.len() as f64,
        Aggregation::Bucket => values.fold(f64::INFINITY, f64::min),
    };
    Ok(GroupSatisfy {
        model_id: first.model_id.clone(),
        group_id: first.group_id,
        value,
        aggregation: agg,
    })
}

/// Groups flat records by triple and aggregates to per-(model, group) satisfy.
pub fn satisfy_table(
    ts: &TestSet,
    records: &[JudgeRecord],
    scale: ScaleKind,
    agg: Aggregation,
) -> Result<BTreeMap<(String, GroupId), f64>> {
    let mut by_triple: BTreeMap<(String, GroupId, String), Vec<JudgeRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.scale == scale) {
        by_triple
            .entry((r.model_id.clone(), r.group_id, r.constraint_id.clone()))
            .or_default()
            .push(r.clone());
    }
    let models: BTreeSet<String> = by_triple.keys().map(|(m, _, _)| m.clone()).collect();
    let mut out = BTreeMap::new();
    for m in models {
        for g in &ts.groups {
            let expected: Vec<String> =
                g.constraints.iter().map(|c| c.constraint_id.clone()).collect();
            let scores = expected
                .iter()
                .filter_map(|c| by_triple.get(&(m.clone(), g.group_id, c.clone())))
                .map(|recs| ensemble_constraint_score(recs))
                .collect::<Result<Vec<_>>>()?;
            let gs = group_satisfy(&scores, &expected, agg).map_err(|e| match e {
                Error::EmptyRecords => {
                    Error::MissingConstraintScore(expected.first().cloned().unwrap_or_default())
                }
                other => other,
            })?;
            out.insert((m.clone(), g.group_id), gs.value);
        }
    }
    Ok(out)
}

pub fn build_cascade_prompt(
    from_passage: &str,
    to_passage: &str,
    edge: &CascadeEdge,
    scale: ScaleKind,
) -> Result<String> {
    if edge.criterion.trim().is_empty() {
        return Err(Error::Precondition(format!(
            "cascade edge G{} -> G{} has no criterion",
            edge.from_group, edge.to_group
        )));
    }
    let mut out = String::new();
    out.push_str(
        "You are checking whether a later part of a story stays logically consistent \
         with an earlier part.\n\n",
    );
    out.push_str(&format!(
        "Earlier passage (group {}):\n\"\"\"\n{from_passage}\n\"\"\"\n\n",
        edge.from_group
    ));
    out.push_str(&format!(
        "Later passage (group {}):\n\"\"\"\n{to_passage}\n\"\"\"\n\n",
        edge.to_group
    ));
    out.push_str("Consistency criterion:\n");
    out.push_str(&edge.criterion);
    out.push_str("\n\n");
    push_scale_block(&mut out, scale);
    out.push_str("\nThere is no knockout rule here; answer KNOCKOUT: no.\n");
    push_output_format(&mut out, scale);
    Ok(out)
}

/// Scores one cascade edge with one judge. The result is reported alongside
/// the leaderboard and never enters totals.
pub fn cascade_consistency(
    ts: &TestSet,
    r: &FilledResponse,
    edge: &CascadeEdge,
    judge: &dyn ChatBackend,
    scale: ScaleKind,
) -> Result<CascadeScore> {
    if edge.criterion.trim().is_empty() {
        return Err(Error::Precondition(format!(
            "cascade edge G{} -> G{} has no criterion",
            edge.from_group, edge.to_group
        )));
    }
    let from = testset::group_passage(ts, &r.fillings, edge.from_group)?;
    let to = testset::group_passage(ts, &r.fillings, edge.to_group)?;
    let prompt = build_cascade_prompt(&from, &to, edge, scale)?;
    let text = judge.complete(&prompt)?;
    let (raw, _) = parse_judge_output(&text, scale)?;
    Ok(CascadeScore {
        model_id: r.model_id.clone(),
        judge_id: judge.name().to_string(),
        from_group: edge.from_group,
        to_group: edge.to_group,
        value: scale.normalize(raw),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constraint(knockout: bool) -> Constraint {
        Constraint {
            constraint_id: "c1".into(),
            text: "The narrator must carry an item.".into(),
            knockout,
        }
    }

    fn rec(judge: &str, raw: f64, ko: bool) -> JudgeRecord {
        let scale = ScaleKind::SixPoint;
        JudgeRecord {
            judge_id: judge.into(),
            model_id: "m".into(),
            group_id: 1,
            constraint_id: "c1".into(),
            scale,
            raw,
            knockout_triggered: ko,
            capped: apply_knockout(raw, ko, scale),
        }
    }

    fn cs(id: &str, value: f64) -> ConstraintScore {
        ConstraintScore {
            model_id: "m".into(),
            group_id: 1,
            constraint_id: id.into(),
            value,
            judges: vec![],
        }
    }

    #[test]
    fn six_point_prompt_has_anchors_and_knockout_clause() {
        let p = build_judge_prompt("Some passage.", &constraint(true), ScaleKind::SixPoint).unwrap();
        for a in SIX_POINT_ANCHORS {
            assert_eq!(p.matches(a).count(), 1, "{a}");
        }
        assert!(p.contains("Knockout rule"));
        assert!(p.contains("SCORE: <value>"));
        assert!(p.contains("KNOCKOUT: yes|no"));
    }

    #[test]
    fn three_tier_prompt_has_three_anchor_lines() {
        let p = build_judge_prompt("P.", &constraint(false), ScaleKind::ThreeTier).unwrap();
        let anchor_lines = p
            .lines()
            .filter(|l| l.starts_with("0 =") || l.starts_with("0.5 =") || l.starts_with("1.0 ="))
            .count();
        assert_eq!(anchor_lines, 3);
        assert!(!p.contains("Knockout rule"));
    }

    #[test]
    fn empty_passage_is_rejected() {
        assert!(build_judge_prompt(" ", &constraint(false), ScaleKind::SixPoint).is_err());
    }

    #[test]
    fn parses_score_and_knockout() {
        assert_eq!(
            parse_judge_output("SCORE: 4\nKNOCKOUT: no", ScaleKind::SixPoint).unwrap(),
            (4.0, false)
        );
        assert_eq!(
            parse_judge_output("…rationale…\nSCORE: 0.5\nKNOCKOUT: no", ScaleKind::ThreeTier)
                .unwrap(),
            (0.5, false)
        );
        assert_eq!(
            parse_judge_output("SCORE: 3\nSCORE: 1\n**KNOCKOUT:** yes", ScaleKind::SixPoint)
                .unwrap(),
            (1.0, true)
        );
    }

    #[test]
    fn out_of_domain_and_missing_scores_fail() {
        assert!(matches!(
            parse_judge_output("SCORE: 7", ScaleKind::SixPoint),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            parse_judge_output("SCORE: 2.5", ScaleKind::SixPoint),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            parse_judge_output("SCORE: 0.7", ScaleKind::ThreeTier),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            parse_judge_output("I think it is fine.", ScaleKind::SixPoint),
            Err(Error::NoScoreLine { .. })
        ));
    }

    #[test]
    fn knockout_caps() {
        assert_eq!(apply_knockout(5.0, true, ScaleKind::SixPoint), 1.0);
        assert_eq!(apply_knockout(0.0, true, ScaleKind::SixPoint), 0.0);
        assert_eq!(apply_knockout(1.0, true, ScaleKind::ThreeTier), 0.5);
        assert_eq!(apply_knockout(4.0, false, ScaleKind::SixPoint), 4.0);
    }

    #[test]
    fn knockout_caps_agree_across_scales() {
        // Exhaustive over both domains: capping never raises a score, is
        // idempotent, and a knocked-out answer never keeps full marks on
        // either scale.
        for scale in [ScaleKind::SixPoint, ScaleKind::ThreeTier] {
            for raw in scale.domain() {
                let c = apply_knockout(raw, true, scale);
                assert!(scale.contains(c));
                assert!(c <= raw);
                assert_eq!(apply_knockout(c, true, scale), c);
                assert!(scale.normalize(c) < 1.0);
            }
        }
        let six = ScaleKind::SixPoint.domain();
        for (i, a) in six.iter().enumerate() {
            for b in &six[i..] {
                assert!(apply_knockout(*a, true, ScaleKind::SixPoint) <= apply_knockout(*b, true, ScaleKind::SixPoint));
            }
        }
        assert!(ScaleKind::ThreeTier.normalize(0.5) >= ScaleKind::SixPoint.normalize(1.0));
    }

    #[test]
    fn ensemble_examples() {
        let v = |rs: &[JudgeRecord]| ensemble_constraint_score(rs).unwrap().value;
        assert!((v(&[rec("a", 4.0, false), rec("b", 5.0, false), rec("c", 3.0, false)]) - 0.8).abs() < 1e-12);
        assert_eq!(v(&[rec("a", 5.0, false)]), 1.0);
        assert!((v(&[rec("a", 5.0, true), rec("b", 4.0, false), rec("c", 4.0, false)]) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ensemble_rejects_empty_and_mixed() {
        assert!(matches!(ensemble_constraint_score(&[]), Err(Error::EmptyRecords)));
        let mut other = rec("b", 1.0, false);
        other.constraint_id = "c2".into();
        assert!(matches!(
            ensemble_constraint_score(&[rec("a", 1.0, false), other]),
            Err(Error::MixedRecords)
        ));
    }

    #[test]
    fn group_satisfy_examples() {
        let ids = |n: usize| (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>();
        let scores: Vec<_> = [1.0, 0.9, 0.9, 0.9, 0.9]
            .iter()
            .enumerate()
            .map(|(i, &v)| cs(&format!("c{i}"), v))
            .collect();
        let soft = group_satisfy(&scores, &ids(5), Aggregation::SoftMean).unwrap().value;
        assert!((soft - 0.92).abs() < 1e-12);

        let scores: Vec<_> = [1.0, 0.9, 0.2]
            .iter()
            .enumerate()
            .map(|(i, &v)| cs(&format!("c{i}"), v))
            .collect();
        assert_eq!(group_satisfy(&scores, &ids(3), Aggregation::Bucket).unwrap().value, 0.2);

        let scores: Vec<_> = (0..4).map(|i| cs(&format!("c{i}"), 0.6)).collect();
        assert_eq!(
            group_satisfy(&scores, &ids(4), Aggregation::SoftMean).unwrap().value,
            group_satisfy(&scores, &ids(4), Aggregation::Bucket).unwrap().value
        );
    }

    #[test]
    fn group_satisfy_names_missing_constraint() {
        let err = group_satisfy(&[cs("c0", 1.0)], &["c0".into(), "c1".into()], Aggregation::SoftMean)
            .unwrap_err();
        assert!(matches!(err, Error::MissingConstraintScore(c) if c == "c1"));
    }

    proptest! {
        #[test]
        fn ensemble_is_bounded_and_order_free(raws in proptest::collection::vec((0u8..=5, any::<bool>()), 1..6)) {
            let recs: Vec<JudgeRecord> = raws
                .iter()
                .enumerate()
                .map(|(i, &(r, ko))| rec(&format!("j{i}"), f64::from(r), ko))
                .collect();
            let v = ensemble_constraint_score(&recs).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&v));
            let mut rev = recs.clone();
            rev.reverse();
            prop_assert!((ensemble_constraint_score(&rev).unwrap().value - v).abs() < 1e-12);
        }

        #[test]
        fn unanimous_ensemble_equals_single_judge(raw in 0u8..=5, n in 1usize..5) {
            let recs: Vec<_> = (0..n).map(|i| rec(&format!("j{i}"), f64::from(raw), false)).collect();
            prop_assert!((ensemble_constraint_score(&recs).unwrap().value - recs[0].normalized()).abs() < 1e-12);
        }
    }
}
