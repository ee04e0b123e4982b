//! A scripted crowd for running the annotation loop without people.
//!
//! Each simulated worker repeatedly claims a HIT from the store and answers
//! every item: quizzes against the gold label, dialogue items against an
//! oracle (usually a [`Lexicon`] of planted cue words). Mistakes and custom
//! labels are injected at configurable rates from a seeded RNG.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::aggregate::{AnnotationRecord, Choice};
use super::hits::HitItem;
use super::store::{AnnotationStore, StoreError};
use crate::text::vocab_tokens;

/// Cue word to label map, read from `word<TAB>label` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    cues: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cues = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (w, l) = line.split_once('\t').ok_or_else(|| format!("line {}: expected word<TAB>label", i + 1))?;
            cues.insert(w.trim().to_lowercase(), l.trim().to_string());
        }
        Ok(Self { cues })
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?).map_err(std::io::Error::other)
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }

    pub fn cues(&self) -> impl Iterator<Item = (&str, &str)> {
        self.cues.iter().map(|(w, l)| (w.as_str(), l.as_str()))
    }

    /// The label with the most cue hits in `text`; ties go to the label
    /// that sorts first.
    pub fn label_of(&self, text: &str) -> Option<&str> {
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for t in vocab_tokens(text) {
            if let Some(l) = self.cues.get(&t) {
                *votes.entry(l.as_str()).or_default() += 1;
            }
        }
        let mut best: Option<(&str, usize)> = None;
        for (l, c) in votes {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((l, c));
            }
        }
        best.map(|(l, _)| l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrowdConfig {
    pub workers: usize,
    /// Chance that a worker gives the oracle's answer.
    pub accuracy: f64,
    /// Chance that a dialogue answer is free text drawn from `custom_vocab`.
    pub custom_rate: f64,
    pub custom_vocab: Vec<String>,
    pub seed: u64,
}

impl Default for CrowdConfig {
    fn default() -> Self {
        Self {
            workers: 9,
            accuracy: 0.85,
            custom_rate: 0.02,
            custom_vocab: ["Greeting", "Declaration", "Commanding", "Hesitant", "Accusing"].map(String::from).to_vec(),
            seed: 31,
        }
    }
}

/// Simulated answers get synthetic, evenly spaced timestamps from here, so
/// a rerun writes the same record log.
pub const SIM_EPOCH_MS: u64 = 1_600_000_000_000;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrowdRun {
    pub hits_worked: usize,
    pub records: usize,
}

fn answer(
    item: &HitItem,
    truth: &dyn Fn(&HitItem) -> Option<String>,
    labels: &[String],
    cfg: &CrowdConfig,
    rng: &mut ChaCha8Rng,
) -> (Choice, bool) {
    match item {
        HitItem::Quiz { suggestions, gold, .. } => {
            let pick = match gold {
                Some(g) if rng.random_bool(cfg.accuracy.clamp(0.0, 1.0)) => g.clone(),
                _ => suggestions.choose(rng).cloned().unwrap_or_default(),
            };
            (Choice::Label(pick), true)
        }
        HitItem::Dialogue { suggestions, .. } => {
            if !cfg.custom_vocab.is_empty() && rng.random_bool(cfg.custom_rate.clamp(0.0, 1.0)) {
                let text = cfg.custom_vocab.choose(rng).unwrap();
                return (Choice::Custom(text.clone()), false);
            }
            let pick = match truth(item) {
                Some(t) if rng.random_bool(cfg.accuracy.clamp(0.0, 1.0)) => t,
                _ => labels.choose(rng).cloned().unwrap_or_default(),
            };
            let top3 = suggestions.iter().any(|s| s.label == pick);
            (Choice::Label(pick), top3)
        }
    }
}

/// Works the store until no simulated worker can claim another HIT.
///
/// Workers take turns in a fixed order, so a run is reproducible for a given
/// seed and store state.
pub fn run_crowd(
    store: &AnnotationStore,
    truth: &dyn Fn(&HitItem) -> Option<String>,
    cfg: &CrowdConfig,
) -> Result<CrowdRun, StoreError> {
    let labels: Vec<String> = store.taxonomy().names().into_iter().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = CrowdRun::default();
    let workers: Vec<String> = (1..=cfg.workers).map(|i| format!("sim-{i:03}")).collect();
    // Items answered before this run, so an interrupted run resumes cleanly.
    let done: HashSet<(String, String)> = store.records().into_iter().map(|r| (r.worker_id, r.item_id)).collect();
    let mut active = vec![true; workers.len()];
    while active.iter().any(|a| *a) {
        for (w, worker) in workers.iter().enumerate() {
            if !active[w] {
                continue;
            }
            let Some(hit) = store.claim_next(worker)? else {
                active[w] = false;
                continue;
            };
            let hit_id = hit.hit_id.clone();
            for item in &hit.items {
                if done.contains(&(worker.clone(), item.item_id().to_string())) {
                    continue;
                }
                let (choice, chose_from_top3) = answer(item, truth, &labels, cfg, &mut rng);
                store.submit(AnnotationRecord {
                    worker_id: worker.clone(),
                    hit_id: hit_id.clone(),
                    item_id: item.item_id().to_string(),
                    dialogue_id: None,
                    turn_index: None,
                    choice,
                    chose_from_top3,
                    timestamp_ms: SIM_EPOCH_MS + run.records as u64 * 1000,
                })?;
                run.records += 1;
            }
            run.hits_worked += 1;
        }
    }
    Ok(run)
}

/// Oracle that reads the target turn of a dialogue item through a lexicon.
pub fn lexicon_truth(lexicon: &Lexicon) -> impl Fn(&HitItem) -> Option<String> + '_ {
    move |item| match item {
        HitItem::Dialogue { turns, .. } => turns.last().and_then(|t| lexicon.label_of(t)).map(str::to_string),
        HitItem::Quiz { .. } => None,
    }
}
