//! Deterministic offline backend. Answers are pure functions of the model
//! name and the request text, so runs are reproducible without a network.

use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

const WORDS: &[&str] = &[
    "lantern", "ledger", "tide", "copper", "gull", "harbour", "rope", "salt", "whistle", "cellar",
    "stranger", "keeper", "storm", "brass", "letter", "shadow", "widow", "captain", "key", "fog",
];

fn digest(model: &str, text: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    h.finalize().into()
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"⟦(\d+)⟧").expect("valid regex"))
}

pub(crate) fn chat(model: &str, prompt: &str) -> String {
    let d = digest(model, prompt);
    if prompt.contains("SCORE: <value>") {
        let three_tier = prompt.contains("SCORE: 0.5)");
        let score = if three_tier {
            ["0", "0.5", "0.5", "1", "1", "1"][usize::from(d[0]) % 6]
        } else {
            ["1", "2", "3", "3", "4", "4", "5", "5"][usize::from(d[0]) % 8]
        };
        let knockout = prompt.contains("Knockout rule") && d[1] < 24;
        return format!(
            "The passage was read against the constraint.\nSCORE: {score}\nKNOCKOUT: {}\n",
            if knockout { "yes" } else { "no" }
        );
    }
    if let Some(story) = prompt.split("Story:\n").nth(1) {
        return marker_re()
            .replace_all(story, |caps: &regex::Captures<'_>| {
                let k = &caps[1];
                let d = digest(model, k);
                let a = WORDS[usize::from(d[0]) % WORDS.len()];
                let b = WORDS[usize::from(d[1]) % WORDS.len()];
                format!("⟦{k}: the {a} and the {b}⟧")
            })
            .into_owned();
    }
    format!("acknowledged ({:02x}{:02x})", d[0], d[1])
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn bump(v: &mut [f64], feature: &str, weight: f64) {
    let d = digest("feature", feature);
    let idx = u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) % v.len() as u64;
    let sign = if d[8] & 1 == 0 { 1.0 } else { -1.0 };
    v[idx as usize] += sign * weight;
}

/// Hashed bag of words plus character trigrams. Text without any
/// alphanumeric character maps to the zero vector.
pub(crate) fn embed(text: &str, dimension: usize) -> Vec<f64> {
    let mut v = vec![0.0; dimension];
    for t in tokens(text) {
        bump(&mut v, &t, 1.0);
        let padded: Vec<char> = format!(" {t} ").chars().collect();
        for w in padded.windows(3) {
            bump(&mut v, &w.iter().collect::<String>(), 0.5);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn story_prompt_gets_every_blank_tagged() {
        let prompt = "Read.\n\nStory:\nA ⟦01⟧ met ⟦02⟧.";
        let out = chat("m", prompt);
        assert!(out.starts_with("A ⟦01: the "));
        assert!(out.contains("⟦02: the "));
        assert_eq!(out, chat("m", prompt));
    }

    #[test]
    fn judge_prompt_gets_score_lines() {
        let out = chat("j", "... SCORE: <value>   (for example SCORE: 4)\nKNOCKOUT: yes|no\n");
        assert!(out.contains("\nSCORE: "));
        assert!(out.contains("KNOCKOUT: no"));
    }

    #[test]
    fn embeddings_track_word_overlap() {
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (n(a) * n(b))
        };
        let a = embed("the old lighthouse keeper", 768);
        let b = embed("the old lighthouse keeper's dog", 768);
        let c = embed("quantum chromodynamics", 768);
        assert!(cos(&a, &b) > cos(&a, &c));
        assert!(embed("...", 16).iter().all(|&x| x == 0.0));
    }
}
