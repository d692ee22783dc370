//! Cascade-constrained multi-blank test sets.
//!
//! A test set is a story skeleton (fixed text interleaved with numbered
//! blanks), a partition of the blanks into groups that share constraint
//! conditions, and a DAG of cascade edges between groups.

mod passage;
mod prompt;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use passage::{blank_context_text, group_filling_text, group_passage, MISSING_PLACEHOLDER};
pub use prompt::{
    blank_marker, parse_response, parse_response_lenient, render_filled_story, render_prompt,
    render_prompt_with, ParsedResponse, PromptOptions, STORY_INSTRUCTION,
};
pub use validate::{validate, Finding, FindingKind, ValidationReport};

pub type BlankId = u32;
pub type GroupId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StorySegment {
    Blank { blank: BlankId },
    Text { text: String },
}

impl StorySegment {
    pub fn text(s: impl Into<String>) -> Self {
        StorySegment::Text { text: s.into() }
    }

    pub fn blank(k: BlankId) -> Self {
        StorySegment::Blank { blank: k }
    }

    pub fn blank_id(&self) -> Option<BlankId> {
        match self {
            StorySegment::Blank { blank } => Some(*blank),
            StorySegment::Text { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(rename = "id")]
    pub constraint_id: String,
    pub text: String,
    /// Set at authoring time when the text carries mandatory wording.
    #[serde(default)]
    pub knockout: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlankGroup {
    #[serde(rename = "id")]
    pub group_id: GroupId,
    #[serde(rename = "blanks")]
    pub blank_ids: Vec<BlankId>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeEdge {
    #[serde(rename = "from")]
    pub from_group: GroupId,
    #[serde(rename = "to")]
    pub to_group: GroupId,
    #[serde(default)]
    pub criterion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSet {
    pub id: String,
    pub language: String,
    pub segments: Vec<StorySegment>,
    pub groups: Vec<BlankGroup>,
    #[serde(default)]
    pub edges: Vec<CascadeEdge>,
}

impl TestSet {
    /// Blank ids in skeleton order.
    pub fn blank_ids(&self) -> Vec<BlankId> {
        self.segments.iter().filter_map(StorySegment::blank_id).collect()
    }

    pub fn blank_count(&self) -> usize {
        self.segments.iter().filter(|s| s.blank_id().is_some()).count()
    }

    pub fn group(&self, id: GroupId) -> Option<&BlankGroup> {
        self.groups.iter().find(|g| g.group_id == id)
    }

    pub fn group_ids(&self) -> Vec<GroupId> {
        self.groups.iter().map(|g| g.group_id).collect()
    }

    pub fn constraint_count(&self) -> usize {
        self.groups.iter().map(|g| g.constraints.len()).sum()
    }

    /// Width used when zero-padding blank numbers in markers.
    pub fn marker_width(&self) -> usize {
        let max = self.blank_ids().into_iter().max().unwrap_or(1);
        max.to_string().len().max(2)
    }
}

/// Per-model fillings, keyed by global blank id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledResponse {
    pub model_id: String,
    pub fillings: BTreeMap<BlankId, String>,
}

/// Parses a test-set document and resolves every cross-reference.
pub fn load_testset(document: &str) -> Result<TestSet> {
    let ts: TestSet = serde_json::from_str(document).map_err(|e| Error::json("test set", e))?;
    check_references(&ts)?;
    Ok(ts)
}

pub fn load_testset_file(path: impl AsRef<Path>) -> Result<TestSet> {
    let path = path.as_ref();
    let doc = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_testset(&doc)
}

fn check_references(ts: &TestSet) -> Result<()> {
    let blanks: BTreeSet<BlankId> = ts.blank_ids().into_iter().collect();
    for g in &ts.groups {
        if let Some(k) = g.blank_ids.iter().find(|k| !blanks.contains(k)) {
            return Err(Error::DanglingReference {
                kind: "blank",
                id: format!("{k} (in group {})", g.group_id),
            });
        }
    }
    let groups: BTreeSet<GroupId> = ts.group_ids().into_iter().collect();
    for e in &ts.edges {
        for end in [e.from_group, e.to_group] {
            if !groups.contains(&end) {
                return Err(Error::DanglingReference {
                    kind: "group",
                    id: format!("{end} (in edge {}->{})", e.from_group, e.to_group),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// One group, one blank, one constraint.
    pub fn minimal() -> TestSet {
        TestSet {
            id: "minimal".into(),
            language: "en".into(),
            segments: vec![
                StorySegment::text("The door opened and "),
                StorySegment::blank(1),
                StorySegment::text(" walked in."),
            ],
            groups: vec![BlankGroup {
                group_id: 1,
                blank_ids: vec![1],
                constraints: vec![Constraint {
                    constraint_id: "c1".into(),
                    text: "Must name a visitor.".into(),
                    knockout: true,
                }],
            }],
            edges: vec![],
        }
    }

    pub fn sample() -> TestSet {
        load_testset(include_str!("../../fixtures/sample_testset.json")).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_fixture_has_36_blanks_in_7_groups() {
        let ts = fixtures::sample();
        assert_eq!(ts.blank_count(), 36);
        assert_eq!(ts.groups.len(), 7);
        assert_eq!(ts.constraint_count(), 20);
        let sizes: Vec<usize> = ts.groups.iter().map(|g| g.blank_ids.len()).collect();
        assert_eq!(sizes, vec![7, 5, 5, 10, 4, 2, 3]);
    }

    #[test]
    fn dangling_blank_reference_is_named() {
        let mut ts = fixtures::minimal();
        ts.groups[0].blank_ids.push(99);
        let doc = serde_json::to_string(&ts).unwrap();
        match load_testset(&doc) {
            Err(Error::DanglingReference { kind, id }) => {
                assert_eq!(kind, "blank");
                assert!(id.starts_with("99"));
            }
            other => panic!("expected dangling reference, got {other:?}"),
        }
    }

    #[test]
    fn dangling_edge_reference_is_named() {
        let mut ts = fixtures::minimal();
        ts.edges.push(CascadeEdge {
            from_group: 1,
            to_group: 4,
            criterion: "x".into(),
        });
        let doc = serde_json::to_string(&ts).unwrap();
        assert!(matches!(
            load_testset(&doc),
            Err(Error::DanglingReference { kind: "group", .. })
        ));
    }

    #[test]
    fn minimal_document_loads() {
        let doc = r#"{
            "id": "m", "language": "en",
            "segments": [{"text": "A "}, {"blank": 1}, {"text": " b."}],
            "groups": [{"id": 1, "blanks": [1],
                        "constraints": [{"id": "c", "text": "t", "knockout": false}]}],
            "edges": []
        }"#;
        let ts = load_testset(doc).unwrap();
        assert_eq!(ts.blank_count(), 1);
        assert!(validate(&ts).is_valid());
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(load_testset("{not json"), Err(Error::Json { .. })));
    }
}
