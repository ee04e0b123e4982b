//! Corpus-frequency readability score and per-class candidate ranking.
//!
//! For a dialogue with `n` word tokens:
//!
//! ```text
//! f_sum = Σ freq(t)          freq(t) = count(t) / total   (relative mode)
//! f     = f_sum / (alpha + n)
//! d     = distinct(t) / n
//! score = f + w_d · d
//! ```
//!
//! In raw-count mode `freq(t) = count(t)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Dialogue;
use crate::text::vocab_tokens;

pub const TOTAL_KEY: &str = "__total__";

#[derive(Debug, Error)]
pub enum ReadabilityError {
    #[error("dialogue has no word tokens; readability is undefined")]
    NoTokens,
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("vocabulary line {line}: {message}")]
    BadVocabulary { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyVocabulary {
    counts: HashMap<String, u64>,
    total_tokens: u64,
}

impl FrequencyVocabulary {
    pub fn from_counts(counts: HashMap<String, u64>) -> Self {
        let total_tokens = counts.values().sum();
        Self { counts, total_tokens }
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &HashMap<String, u64> {
        &self.counts
    }

    /// Writes `token<TAB>count` lines sorted by token, then the total record.
    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut keys: Vec<_> = self.counts.iter().collect();
        keys.sort();
        for (t, c) in keys {
            writeln!(w, "{t}\t{c}")?;
        }
        writeln!(w, "{TOTAL_KEY}\t{}", self.total_tokens)
    }

    pub fn read_tsv(r: impl BufRead) -> Result<Self, ReadabilityError> {
        let mut counts = HashMap::new();
        let mut declared = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |message: &str| ReadabilityError::BadVocabulary { line: i + 1, message: message.to_string() };
            let (tok, count) = line.split_once('\t').ok_or_else(|| bad("expected token<TAB>count"))?;
            let count: u64 = count.trim().parse().map_err(|_| bad("count is not a non-negative integer"))?;
            if tok == TOTAL_KEY {
                declared = Some(count);
            } else {
                counts.insert(tok.to_string(), count);
            }
        }
        let vocab = Self::from_counts(counts);
        if let Some(total) = declared {
            if total != vocab.total_tokens {
                return Err(ReadabilityError::BadVocabulary {
                    line: 0,
                    message: format!("total record {total} does not match summed counts {}", vocab.total_tokens),
                });
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_tsv(&mut f)?;
        f.flush()
    }

    pub fn load(path: &Path) -> Result<Self, ReadabilityError> {
        Self::read_tsv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Counts case-folded word tokens over every turn of every dialogue.
pub fn build_vocabulary(dialogues: &[Dialogue]) -> FrequencyVocabulary {
    let counts = dialogues
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<String, u64>, d| {
            for turn in &d.turns {
                for t in vocab_tokens(&turn.text) {
                    *acc.entry(t).or_insert(0) += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    FrequencyVocabulary::from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyMode {
    #[default]
    Relative,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadabilityParams {
    pub alpha: f64,
    pub w_d: f64,
    pub mode: FrequencyMode,
}

impl Default for ReadabilityParams {
    fn default() -> Self {
        Self { alpha: 87.0, w_d: 0.04, mode: FrequencyMode::Relative }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityScore {
    pub f: f64,
    pub d: f64,
    pub score: f64,
    pub alpha: f64,
    pub w_d: f64,
}

/// Scores the concatenated word tokens of `turns`.
pub fn readability<S: AsRef<str>>(
    turns: &[S],
    vocab: &FrequencyVocabulary,
    params: &ReadabilityParams,
) -> Result<ReadabilityScore, ReadabilityError> {
    if vocab.total_tokens == 0 {
        return Err(ReadabilityError::EmptyVocabulary);
    }
    let tokens: Vec<String> = turns.iter().flat_map(|t| vocab_tokens(t.as_ref())).collect();
    if tokens.is_empty() {
        return Err(ReadabilityError::NoTokens);
    }
    let n = tokens.len() as f64;
    let denom = match params.mode {
        FrequencyMode::Relative => vocab.total_tokens as f64,
        FrequencyMode::Raw => 1.0,
    };
    let f_sum: f64 = tokens.iter().map(|t| vocab.count(t) as f64 / denom).sum();
    let f = f_sum / (params.alpha + n);
    let distinct: HashSet<&String> = tokens.iter().collect();
    let d = distinct.len() as f64 / n;
    Ok(ReadabilityScore { f, d, score: f + params.w_d * d, alpha: params.alpha, w_d: params.w_d })
}

pub fn dialogue_readability(
    dialogue: &Dialogue,
    vocab: &FrequencyVocabulary,
    params: &ReadabilityParams,
) -> Result<ReadabilityScore, ReadabilityError> {
    readability(&dialogue.texts(), vocab, params)
}

/// A scored annotation candidate tagged with its predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub class: String,
    pub score: f64,
}

/// One line of the ranked-candidate manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub class: String,
    /// 1-based.
    pub rank: usize,
    pub id: String,
    pub score: f64,
}

/// Per class: descending score, ties by id, at most `top_k`.
pub fn rank_candidates(candidates: &[Candidate], top_k: usize) -> BTreeMap<String, Vec<Candidate>> {
    let mut by_class: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    for c in candidates {
        by_class.entry(c.class.clone()).or_default().push(c.clone());
    }
    for list in by_class.values_mut() {
        list.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        list.truncate(top_k);
    }
    by_class
}

/// Flattens a ranking into manifest rows, class by class.
pub fn ranked_rows(ranking: &BTreeMap<String, Vec<Candidate>>) -> Vec<RankedCandidate> {
    ranking
        .iter()
        .flat_map(|(class, list)| {
            list.iter().enumerate().map(move |(i, c)| RankedCandidate {
                class: class.clone(),
                rank: i + 1,
                id: c.id.clone(),
                score: c.score,
            })
        })
        .collect()
}
