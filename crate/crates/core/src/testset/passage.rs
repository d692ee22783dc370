use std::collections::BTreeMap;

use super::{BlankId, FilledResponse, GroupId, StorySegment, TestSet};
use crate::error::{Error, Result};

/// Stand-in text for a blank the evaluated model did not fill.
pub const MISSING_PLACEHOLDER: &str = "____";

const TERMINATORS: &[char] = &['.', '!', '?', '\n', '。', '！', '？', '…'];
const CLOSERS: &[char] = &['"', '\'', '”', '’', ')', '）', '」', '』'];

/// Byte offsets just past each sentence end (terminator plus closing quotes).
fn sentence_ends(text: &str) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !TERMINATORS.contains(&c) {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, d)) = chars.peek() {
            if TERMINATORS.contains(&d) || CLOSERS.contains(&d) {
                end = j + d.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        ends.push(end);
    }
    ends
}

/// The partial sentence leading into a blank plus one full sentence before it.
fn leading_context(text: &str) -> &str {
    let ends = sentence_ends(text);
    let start = if ends.len() >= 2 { ends[ends.len() - 2] } else { 0 };
    &text[start..]
}

/// The partial sentence following a blank plus one full sentence after it.
fn trailing_context(text: &str) -> &str {
    let ends = sentence_ends(text);
    let end = ends.get(1).copied().unwrap_or(text.len());
    &text[..end]
}

fn group_span(ts: &TestSet, g: GroupId) -> Result<(usize, usize)> {
    let group = ts.group(g).ok_or(Error::UnknownGroup(g))?;
    let (Some(&first), Some(&last)) = (group.blank_ids.first(), group.blank_ids.last()) else {
        return Err(Error::Precondition(format!("group {g} has no blanks")));
    };
    let index_of = |k: BlankId| {
        ts.segments
            .iter()
            .position(|s| s.blank_id() == Some(k))
            .ok_or(Error::DanglingReference {
                kind: "blank",
                id: k.to_string(),
            })
    };
    Ok((index_of(first)?, index_of(last)?))
}

/// Passage for group `g` with whatever fillings are available; missing blanks
/// are rendered as [`MISSING_PLACEHOLDER`].
pub fn group_passage(
    ts: &TestSet,
    fillings: &BTreeMap<BlankId, String>,
    g: GroupId,
) -> Result<String> {
    let (lo, hi) = group_span(ts, g)?;
    let mut out = String::new();
    if let Some(StorySegment::Text { text }) = lo.checked_sub(1).map(|i| &ts.segments[i]) {
        out.push_str(leading_context(text));
    }
    for seg in &ts.segments[lo..=hi] {
        match seg {
            StorySegment::Text { text } => out.push_str(text),
            StorySegment::Blank { blank } => out.push_str(
                fillings
                    .get(blank)
                    .map(String::as_str)
                    .unwrap_or(MISSING_PLACEHOLDER),
            ),
        }
    }
    if let Some(StorySegment::Text { text }) = ts.segments.get(hi + 1) {
        out.push_str(trailing_context(text));
    }
    Ok(out.trim().to_string())
}

/// The story passage judges see for group `g`: the group's blanks with
/// fillings substituted plus one sentence of fixed context on each side.
pub fn group_filling_text(ts: &TestSet, r: &FilledResponse, g: GroupId) -> Result<String> {
    let group = ts.group(g).ok_or(Error::UnknownGroup(g))?;
    let missing: Vec<BlankId> = group
        .blank_ids
        .iter()
        .copied()
        .filter(|k| !r.fillings.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingBlanks(missing));
    }
    group_passage(ts, &r.fillings, g)
}

/// A single filling embedded in the partial sentences around it.
pub fn blank_context_text(ts: &TestSet, filling: &str, k: BlankId) -> Result<String> {
    let idx = ts
        .segments
        .iter()
        .position(|s| s.blank_id() == Some(k))
        .ok_or(Error::DanglingReference {
            kind: "blank",
            id: k.to_string(),
        })?;
    let mut out = String::new();
    if let Some(StorySegment::Text { text }) = idx.checked_sub(1).map(|i| &ts.segments[i]) {
        let ends = sentence_ends(text);
        out.push_str(&text[ends.last().copied().unwrap_or(0)..]);
    }
    out.push_str(filling);
    if let Some(StorySegment::Text { text }) = ts.segments.get(idx + 1) {
        let ends = sentence_ends(text);
        out.push_str(&text[..ends.first().copied().unwrap_or(text.len())]);
    }
    Ok(out.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testset::fixtures::{minimal, sample};

    fn response(ts: &TestSet, f: impl Fn(BlankId) -> String) -> FilledResponse {
        FilledResponse {
            model_id: "m".into(),
            fillings: ts.blank_ids().into_iter().map(|k| (k, f(k))).collect(),
        }
    }

    #[test]
    fn minimal_passage_is_the_whole_story() {
        let ts = minimal();
        let r = response(&ts, |_| "Ann".into());
        assert_eq!(
            group_filling_text(&ts, &r, 1).unwrap(),
            "The door opened and Ann walked in."
        );
    }

    #[test]
    fn sample_g1_has_its_fillings_and_no_markers() {
        let ts = sample();
        let r = response(&ts, |k| format!("FILL{k:02}"));
        let p = group_filling_text(&ts, &r, 1).unwrap();
        for k in 1..=7 {
            assert!(p.contains(&format!("FILL{k:02}")), "blank {k}");
        }
        assert!(!p.contains("FILL08"));
        assert!(!p.contains('⟦') && !p.contains('⟧'));
    }

    #[test]
    fn passages_are_local_to_their_group() {
        let ts = sample();
        let a = response(&ts, |k| format!("a{k}"));
        let mut b = a.clone();
        b.fillings.insert(8, "something else entirely".into());
        assert_eq!(
            group_filling_text(&ts, &a, 1).unwrap(),
            group_filling_text(&ts, &b, 1).unwrap()
        );
        assert_ne!(
            group_filling_text(&ts, &a, 2).unwrap(),
            group_filling_text(&ts, &b, 2).unwrap()
        );
    }

    #[test]
    fn unknown_group_is_an_error() {
        let ts = minimal();
        let r = response(&ts, |_| "x".into());
        assert!(matches!(group_filling_text(&ts, &r, 9), Err(Error::UnknownGroup(9))));
    }

    #[test]
    fn context_is_one_sentence_each_side() {
        assert_eq!(leading_context("A b. C d. E f "), " C d. E f ");
        assert_eq!(leading_context("Only this "), "Only this ");
        assert_eq!(trailing_context(" x y. Next one! Not this."), " x y. Next one!");
        assert_eq!(trailing_context("\" she said. Then \"Go.\" More."), "\" she said. Then \"Go.\"");
    }

    #[test]
    fn blank_context_is_the_enclosing_sentence() {
        let ts = minimal();
        assert_eq!(
            blank_context_text(&ts, "Ann", 1).unwrap(),
            "The door opened and Ann walked in."
        );
    }
}
