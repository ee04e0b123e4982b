//! Dialogue assembly: group turns into dialogues by timestamp gaps, then
//! clean them.

mod clean;

use serde::{Deserialize, Serialize};

pub use clean::{clean_dialogues, strip_speaker_prefix, CleaningConfig, CleaningReport};

use crate::text::tokenize;

/// One speaker turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub text: String,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub tokens: Vec<String>,
    pub doc_id: String,
}

impl Turn {
    pub fn new(text: impl Into<String>, start_ms: Option<u64>, end_ms: Option<u64>, doc_id: &str) -> Self {
        let text = text.into();
        Self { tokens: tokenize(&text), text, start_ms, end_ms, doc_id: doc_id.to_string() }
    }

    /// Same timing and document, new text; tokens are re-derived.
    pub fn with_text(&self, text: impl Into<String>) -> Self {
        Self::new(text, self.start_ms, self.end_ms, &self.doc_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Raw,
    Cleaned,
    Emotional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "DialogueRecord", into = "DialogueRecord")]
pub struct Dialogue {
    pub dialogue_id: String,
    pub doc_id: String,
    pub turns: Vec<Turn>,
    pub provenance: Provenance,
}

impl Dialogue {
    pub fn token_count(&self) -> usize {
        self.turns.iter().map(|t| t.tokens.len()).sum()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.turns.iter().map(|t| t.text.as_str()).collect()
    }
}

/// Line-delimited dialogue store record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub dialogue_id: String,
    pub doc_id: String,
    pub provenance: Provenance,
    pub turns: Vec<TurnRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub text: String,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
}

impl From<DialogueRecord> for Dialogue {
    fn from(r: DialogueRecord) -> Self {
        let turns = r.turns.into_iter().map(|t| Turn::new(t.text, t.start_ms, t.end_ms, &r.doc_id)).collect();
        Dialogue { dialogue_id: r.dialogue_id, doc_id: r.doc_id, turns, provenance: r.provenance }
    }
}

impl From<Dialogue> for DialogueRecord {
    fn from(d: Dialogue) -> Self {
        DialogueRecord {
            dialogue_id: d.dialogue_id,
            doc_id: d.doc_id,
            provenance: d.provenance,
            turns: d.turns.into_iter().map(|t| TurnRecord { text: t.text, start_ms: t.start_ms, end_ms: t.end_ms }).collect(),
        }
    }
}

pub const DEFAULT_GAP_MS: u64 = 5000;

/// Splits document-ordered turns into dialogues.
///
/// A boundary falls between two turns when the current turn starts more
/// than `gap_ms` after the previous turn ends. When either timestamp is
/// missing the turns stay together. Turns from different documents never
/// share a dialogue.
pub fn split_dialogues(turns: &[Turn], gap_ms: u64) -> Vec<Dialogue> {
    let mut out: Vec<Dialogue> = Vec::new();
    let mut per_doc: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut prev: Option<&Turn> = None;
    for turn in turns {
        let boundary = match prev {
            None => true,
            Some(p) if p.doc_id != turn.doc_id => true,
            Some(p) => match (p.end_ms, turn.start_ms) {
                (Some(end), Some(start)) => start.saturating_sub(end) > gap_ms,
                _ => false,
            },
        };
        if boundary {
            let n = per_doc.entry(&turn.doc_id).or_insert(0);
            *n += 1;
            out.push(Dialogue {
                dialogue_id: format!("{}/{:04}", turn.doc_id, n),
                doc_id: turn.doc_id.clone(),
                turns: Vec::new(),
                provenance: Provenance::Raw,
            });
        }
        out.last_mut().unwrap().turns.push(turn.clone());
        prev = Some(turn);
    }
    out
}
