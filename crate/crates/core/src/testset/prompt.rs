use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::{BlankId, FilledResponse, StorySegment, TestSet};
use crate::error::{Error, Result};

/// Standardized instruction sent to every evaluated model.
pub const STORY_INSTRUCTION: &str = "Please read the following story, replace every blank \
with your own filled-in content, and output the complete, directly readable story.";

const FORMAT_INSTRUCTION: &str = "Each blank is shown as its number between ⟦ and ⟧. \
In your output, write each filling inline in place of its marker, wrapped as \
⟦number: your filling⟧ using the same number. Fill every blank exactly once and keep \
all other text of the story unchanged.";

/// Fraction of fixed-text anchors that must be located for untagged transcripts.
const MIN_ANCHOR_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, Default)]
pub struct PromptOptions {
    /// Show each group's constraint conditions to the evaluated model.
    pub reveal_constraints: bool,
}

pub fn blank_marker(k: BlankId, width: usize) -> String {
    format!("⟦{k:0width$}⟧")
}

pub fn render_prompt(ts: &TestSet) -> String {
    render_prompt_with(ts, PromptOptions::default())
}

pub fn render_prompt_with(ts: &TestSet, opts: PromptOptions) -> String {
    let width = ts.marker_width();
    let mut story = String::new();
    for seg in &ts.segments {
        match seg {
            StorySegment::Text { text } => story.push_str(text),
            StorySegment::Blank { blank } => story.push_str(&blank_marker(*blank, width)),
        }
    }

    let mut out = String::new();
    out.push_str(STORY_INSTRUCTION);
    out.push_str("\n\n");
    out.push_str(FORMAT_INSTRUCTION);
    out.push_str("\n\n");
    if opts.reveal_constraints {
        out.push_str("Each group of blanks must satisfy these conditions:\n");
        for g in &ts.groups {
            let first = g.blank_ids.first().copied().unwrap_or(0);
            let last = g.blank_ids.last().copied().unwrap_or(0);
            out.push_str(&format!(
                "Blanks {first:0width$}-{last:0width$}:\n"
            ));
            for c in &g.constraints {
                out.push_str(&format!("- {}\n", c.text));
            }
        }
        out.push('\n');
    }
    out.push_str("Story:\n");
    out.push_str(&story);
    out.push('\n');
    out
}

/// Substitutes fillings into the skeleton. With `tagged`, each filling is
/// wrapped as `⟦k: filling⟧`, which is the format `parse_response` expects.
pub fn render_filled_story(
    ts: &TestSet,
    fillings: &BTreeMap<BlankId, String>,
    tagged: bool,
) -> String {
    let width = ts.marker_width();
    let mut out = String::new();
    for seg in &ts.segments {
        match seg {
            StorySegment::Text { text } => out.push_str(text),
            StorySegment::Blank { blank } => {
                let fill = fillings.get(blank).map(String::as_str).unwrap_or("");
                if tagged {
                    out.push_str(&format!("⟦{blank:0width$}: {fill}⟧"));
                } else {
                    out.push_str(fill);
                }
            }
        }
    }
    out
}

/// Result of lenient parsing: whatever could be recovered, plus the blanks
/// that could not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub response: FilledResponse,
    pub missing: Vec<BlankId>,
    /// True when fillings came from skeleton alignment rather than tags.
    pub aligned: bool,
}

pub fn parse_response(ts: &TestSet, raw: &str, model_id: &str) -> Result<FilledResponse> {
    let parsed = parse_response_lenient(ts, raw, model_id)?;
    if !parsed.missing.is_empty() {
        return Err(Error::MissingBlanks(parsed.missing));
    }
    Ok(parsed.response)
}

/// Like [`parse_response`] but reports missing blanks as data instead of
/// failing. Duplicate tags, unknown tags and alignment failure are still errors.
pub fn parse_response_lenient(ts: &TestSet, raw: &str, model_id: &str) -> Result<ParsedResponse> {
    static TAG: OnceLock<Regex> = OnceLock::new();
    let tag = TAG.get_or_init(|| Regex::new(r"(?s)⟦\s*(\d+)\s*[:：](.*?)⟧").unwrap());

    let blanks = ts.blank_ids();
    let (fillings, aligned) = if tag.is_match(raw) {
        let mut fillings = BTreeMap::new();
        for cap in tag.captures_iter(raw) {
            let k: BlankId = cap[1]
                .parse()
                .map_err(|_| Error::Precondition(format!("blank number {} overflows", &cap[1])))?;
            if !blanks.contains(&k) {
                return Err(Error::UnknownBlankTag(k));
            }
            if fillings.insert(k, cap[2].trim().to_string()).is_some() {
                return Err(Error::DuplicateTag(k));
            }
        }
        (fillings, false)
    } else {
        (align_to_skeleton(ts, raw)?, true)
    };

    let fillings: BTreeMap<BlankId, String> =
        fillings.into_iter().filter(|(_, v)| !v.is_empty()).collect();
    let missing = blanks
        .iter()
        .copied()
        .filter(|k| !fillings.contains_key(k))
        .collect();
    Ok(ParsedResponse {
        response: FilledResponse {
            model_id: model_id.to_string(),
            fillings,
        },
        missing,
        aligned,
    })
}

/// Recovers fillings from an untagged transcript by locating each fixed-text
/// segment in order and taking the spans between them. A blank is recovered
/// only when the anchors on both sides of it were found.
fn align_to_skeleton(ts: &TestSet, raw: &str) -> Result<BTreeMap<BlankId, String>> {
    let total = ts
        .segments
        .iter()
        .filter(|s| matches!(s, StorySegment::Text { .. }))
        .count();
    let mut found = 0;
    let mut out = BTreeMap::new();

    let mut pos = 0usize;
    // Start offset is known only if the preceding anchor (or story start) was located.
    let mut start_known = true;
    let mut pending: Vec<(BlankId, usize, bool)> = Vec::new();

    for seg in &ts.segments {
        match seg {
            StorySegment::Blank { blank } => {
                let known = start_known && pending.is_empty();
                pending.push((*blank, pos, known));
            }
            StorySegment::Text { text } => {
                // A filling is non-empty, so skip at least one char past it.
                let from = if pending.is_empty() {
                    pos
                } else {
                    next_char_boundary(raw, pos)
                };
                match locate_anchor(raw, from, text) {
                    Some((a_start, a_end)) => {
                        found += 1;
                        if let [(k, fill_start, true)] = pending.as_slice() {
                            out.insert(*k, raw[*fill_start..a_start].trim().to_string());
                        }
                        pending.clear();
                        pos = a_end;
                        start_known = true;
                    }
                    None => {
                        if pending.is_empty() {
                            start_known = false;
                        } else if let Some(last) = pending.last_mut() {
                            // The blank's end is unknown; it cannot be split from the next one.
                            last.2 = false;
                        }
                    }
                }
            }
        }
    }
    if let [(k, fill_start, true)] = pending.as_slice() {
        out.insert(*k, raw[*fill_start..].trim().to_string());
    }

    if total > 0 && (found as f64) < MIN_ANCHOR_FRACTION * total as f64 {
        return Err(Error::AlignmentFailure { found, total });
    }
    Ok(out)
}

fn next_char_boundary(s: &str, pos: usize) -> usize {
    s[pos..]
        .char_indices()
        .nth(1)
        .map(|(i, _)| pos + i)
        .unwrap_or(s.len())
}

/// Finds `anchor` in `raw[from..]`. Falls back to the longest located prefix
/// (for the start) and the longest located suffix after it (for the end), as
/// long as each covers at least half the anchor.
fn locate_anchor(raw: &str, from: usize, anchor: &str) -> Option<(usize, usize)> {
    let needle = anchor.trim();
    if needle.is_empty() || from > raw.len() {
        return None;
    }
    let hay = &raw[from..];
    if let Some(i) = hay.find(needle) {
        return Some((from + i, from + i + needle.len()));
    }

    let bounds: Vec<usize> = needle
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(needle.len()))
        .collect();
    let nchars = bounds.len() - 1;
    let min_chars = (nchars / 2).max(1);

    let start = (min_chars..nchars).rev().find_map(|n| {
        hay.find(&needle[..bounds[n]]).map(|i| (from + i, bounds[n]))
    })?;
    let (a_start, prefix_len) = start;
    let after = a_start + prefix_len;
    let end = (min_chars..nchars).rev().find_map(|n| {
        let suffix = &needle[bounds[nchars - n]..];
        raw[after..].find(suffix).map(|i| after + i + suffix.len())
    });
    Some((a_start, end.unwrap_or(after)))
}
