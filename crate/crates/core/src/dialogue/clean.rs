use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Dialogue, Provenance, Turn};
use crate::text::{mix64, normalize_space, tokenize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    pub min_chars: usize,
    pub max_chars: usize,
    pub min_alpha_ratio: f64,
    /// Count spaces in the alphabetic-ratio denominator.
    pub alpha_ratio_counts_spaces: bool,
    pub repetitive_min_tokens: usize,
    pub repetitive_max_share: f64,
    pub recap_prefix: String,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            min_chars: 2,
            max_chars: 100,
            min_alpha_ratio: 0.60,
            alpha_ratio_counts_spaces: false,
            repetitive_min_tokens: 10,
            repetitive_max_share: 0.5,
            recap_prefix: "previously on".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input_dialogues: usize,
    pub input_turns: usize,
    pub output_dialogues: usize,
    pub output_turns: usize,
    /// Turns whose speaker prefix was stripped (not a removal).
    pub names_stripped: usize,
    pub removed_names: usize,
    pub removed_recap: usize,
    pub removed_char_length: usize,
    pub removed_alpha_ratio: usize,
    pub removed_repetitive: usize,
    pub removed_duplicate: usize,
    pub dropped_suffix_turns: usize,
    pub dropped_single_turn_dialogues: usize,
    /// Turns discarded together with dialogues left under two turns.
    pub dropped_single_turn_dialogue_turns: usize,
    pub removed_duplicate_dialogues: usize,
    pub removed_duplicate_dialogue_turns: usize,
}

impl CleaningReport {
    pub fn removed_turns(&self) -> usize {
        self.removed_names
            + self.removed_recap
            + self.removed_char_length
            + self.removed_alpha_ratio
            + self.removed_repetitive
            + self.removed_duplicate
            + self.dropped_suffix_turns
            + self.dropped_single_turn_dialogue_turns
            + self.removed_duplicate_dialogue_turns
    }

    fn merge(mut self, o: &Self) -> Self {
        self.input_dialogues += o.input_dialogues;
        self.input_turns += o.input_turns;
        self.names_stripped += o.names_stripped;
        self.removed_names += o.removed_names;
        self.removed_recap += o.removed_recap;
        self.removed_char_length += o.removed_char_length;
        self.removed_alpha_ratio += o.removed_alpha_ratio;
        self.removed_repetitive += o.removed_repetitive;
        self.removed_duplicate += o.removed_duplicate;
        self.dropped_suffix_turns += o.dropped_suffix_turns;
        self.dropped_single_turn_dialogues += o.dropped_single_turn_dialogues;
        self.dropped_single_turn_dialogue_turns += o.dropped_single_turn_dialogue_turns;
        self
    }
}

/// Removes leading dialogue dashes and `NAME:` speaker labels, where NAME
/// is up to three capitalized words. Applied until nothing changes.
pub fn strip_speaker_prefix(text: &str) -> String {
    static PREFIX: OnceLock<Regex> = OnceLock::new();
    let re = PREFIX.get_or_init(|| {
        Regex::new(r"^(?:[-\u{2013}\u{2014}]+\s*|\p{Lu}[\p{L}'.\-]*(?:\s+\p{Lu}[\p{L}'.\-]*){0,2}\s*:(?:\s+|$))").unwrap()
    });
    let mut s = text.trim().to_string();
    loop {
        let next = re.replace(&s, "").trim().to_string();
        if next == s {
            return s;
        }
        s = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rejection {
    Names,
    Recap,
    CharLength,
    AlphaRatio,
    Repetitive,
}

fn alpha_ratio(text: &str, counts_spaces: bool) -> f64 {
    let (mut alpha, mut total) = (0usize, 0usize);
    for c in text.chars() {
        if c.is_whitespace() && !counts_spaces {
            continue;
        }
        total += 1;
        if c.is_alphabetic() {
            alpha += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        alpha as f64 / total as f64
    }
}

fn is_repetitive(text: &str, cfg: &CleaningConfig) -> bool {
    let tokens = tokenize(text);
    if tokens.len() < cfg.repetitive_min_tokens {
        return false;
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in tokens.iter() {
        *counts.entry(t.to_lowercase()).or_insert(0) += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    top as f64 / tokens.len() as f64 > cfg.repetitive_max_share
}

fn judge(text: &str, cfg: &CleaningConfig) -> Option<Rejection> {
    if text.is_empty() {
        return Some(Rejection::Names);
    }
    if text.to_lowercase().starts_with(&cfg.recap_prefix) {
        return Some(Rejection::Recap);
    }
    let n = text.chars().count();
    if n < cfg.min_chars || n > cfg.max_chars {
        return Some(Rejection::CharLength);
    }
    if alpha_ratio(text, cfg.alpha_ratio_counts_spaces) < cfg.min_alpha_ratio {
        return Some(Rejection::AlphaRatio);
    }
    if is_repetitive(text, cfg) {
        return Some(Rejection::Repetitive);
    }
    None
}

fn clean_one(d: &Dialogue, cfg: &CleaningConfig) -> (Option<Dialogue>, CleaningReport) {
    let mut report = CleaningReport { input_dialogues: 1, input_turns: d.turns.len(), ..Default::default() };
    let mut kept: Vec<Turn> = Vec::new();
    for (i, turn) in d.turns.iter().enumerate() {
        let text = normalize_space(&strip_speaker_prefix(&turn.text));
        if text != normalize_space(&turn.text) {
            report.names_stripped += 1;
        }
        let verdict = judge(&text, cfg);
        let duplicate = verdict.is_none() && kept.last().is_some_and(|p| p.text == text);
        match (verdict, duplicate) {
            (None, false) => {
                kept.push(turn.with_text(text));
                continue;
            }
            (Some(Rejection::Names), _) => report.removed_names += 1,
            (Some(Rejection::Recap), _) => report.removed_recap += 1,
            (Some(Rejection::CharLength), _) => report.removed_char_length += 1,
            (Some(Rejection::AlphaRatio), _) => report.removed_alpha_ratio += 1,
            (Some(Rejection::Repetitive), _) => report.removed_repetitive += 1,
            (None, true) => report.removed_duplicate += 1,
        }
        report.dropped_suffix_turns += d.turns.len() - i - 1;
        break;
    }
    if kept.len() < 2 {
        report.dropped_single_turn_dialogues += 1;
        report.dropped_single_turn_dialogue_turns += kept.len();
        return (None, report);
    }
    let cleaned = Dialogue {
        dialogue_id: d.dialogue_id.clone(),
        doc_id: d.doc_id.clone(),
        turns: kept,
        provenance: Provenance::Cleaned,
    };
    (Some(cleaned), report)
}

fn fingerprint(d: &Dialogue) -> u64 {
    d.turns.iter().fold(0x5157_4f53_u64, |h, t| crate::text::combine(h, crate::text::hash_feature("turn", &t.text))) ^ mix64(d.turns.len() as u64)
}

/// Applies the turn filters, the suffix-drop rule, the two-turn minimum
/// and corpus-wide exact deduplication (first occurrence wins).
pub fn clean_dialogues(dialogues: &[Dialogue], cfg: &CleaningConfig) -> (Vec<Dialogue>, CleaningReport) {
    let results: Vec<(Option<Dialogue>, CleaningReport)> = dialogues.par_iter().map(|d| clean_one(d, cfg)).collect();
    let mut report = results.iter().fold(CleaningReport::default(), |acc, (_, r)| acc.merge(r));

    let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut out: Vec<Dialogue> = Vec::new();
    for d in results.into_iter().filter_map(|(d, _)| d) {
        let bucket = seen.entry(fingerprint(&d)).or_default();
        if bucket.iter().any(|&i| out[i].texts() == d.texts()) {
            report.removed_duplicate_dialogues += 1;
            report.removed_duplicate_dialogue_turns += d.turns.len();
            continue;
        }
        bucket.push(out.len());
        out.push(d);
    }
    report.output_dialogues = out.len();
    report.output_turns = out.iter().map(|d| d.turns.len()).sum();
    (out, report)
}
