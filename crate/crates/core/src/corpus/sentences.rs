use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Sentence, SubtitleDocument};

const DEFAULT_ABBREVIATIONS: &str = include_str!("../../assets/abbreviations.txt");

/// Words ending in a period that do not end a sentence.
#[derive(Debug, Clone)]
pub struct AbbreviationList {
    entries: HashSet<String>,
}

impl Default for AbbreviationList {
    fn default() -> Self {
        Self::parse(DEFAULT_ABBREVIATIONS)
    }
}

impl AbbreviationList {
    /// One entry per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { entries }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn ends_sentence(word: &str, guard: &AbbreviationList) -> bool {
    let core = word.trim_end_matches(['"', '\'', '\u{201d}', '\u{2019}', ')', ']']);
    let Some(last) = core.chars().last() else {
        return false;
    };
    match last {
        '!' | '?' | '\u{2026}' => true,
        '.' => !guard.contains(core),
        _ => false,
    }
}

/// Splits every block into sentences on terminal punctuation.
///
/// Sentences never cross block boundaries, and a block without terminal
/// punctuation yields exactly one sentence.
pub fn segment_sentences(doc: &SubtitleDocument, guard: &AbbreviationList) -> Vec<Sentence> {
    let mut out = Vec::new();
    for block in &doc.blocks {
        let joined = block.lines.join(" ");
        let mut order = 0u32;
        let mut current: Vec<&str> = Vec::new();
        let mut emit = |words: &mut Vec<&str>, order: &mut u32| {
            if words.is_empty() {
                return;
            }
            out.push(Sentence {
                text: words.join(" "),
                block_index: block.index,
                order_in_block: *order,
                start_ms: block.start_ms,
                end_ms: block.end_ms,
            });
            *order += 1;
            words.clear();
        };
        for word in joined.split_whitespace() {
            current.push(word);
            if ends_sentence(word, guard) {
                emit(&mut current, &mut order);
            }
        }
        emit(&mut current, &mut order);
    }
    out
}

/// Line-delimited sentence record written by the ingest stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub doc_id: String,
    pub block_index: u32,
    pub order: u32,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub text: String,
}

impl SentenceRecord {
    pub fn new(doc_id: &str, s: &Sentence) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            block_index: s.block_index,
            order: s.order_in_block,
            start_ms: s.start_ms,
            end_ms: s.end_ms,
            text: s.text.clone(),
        }
    }

    pub fn to_sentence(&self) -> Sentence {
        Sentence {
            text: self.text.clone(),
            block_index: self.block_index,
            order_in_block: self.order,
            start_ms: self.start_ms,
            end_ms: self.end_ms,
        }
    }
}
