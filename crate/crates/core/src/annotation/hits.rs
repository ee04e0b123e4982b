use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labeling::{HighConfidenceItem, Suggestion};

pub const DIALOGUES_PER_HIT: usize = 15;
pub const QUIZZES_PER_HIT: usize = 5;
pub const WORKERS_PER_HIT: usize = 3;

/// A situation with a known label, used as a quality checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizQuestion {
    pub quiz_id: String,
    pub situation: String,
    pub gold: String,
    /// Three choices, one of which is `gold`.
    pub suggestions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HitItem {
    Dialogue {
        item_id: String,
        dialogue_id: String,
        turn_index: usize,
        /// Oldest first; the last turn is the one to label.
        turns: Vec<String>,
        suggestions: Vec<Suggestion>,
    },
    Quiz {
        item_id: String,
        situation: String,
        suggestions: Vec<String>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        gold: Option<String>,
    },
}

impl HitItem {
    pub fn item_id(&self) -> &str {
        match self {
            HitItem::Dialogue { item_id, .. } | HitItem::Quiz { item_id, .. } => item_id,
        }
    }

    pub fn is_quiz(&self) -> bool {
        matches!(self, HitItem::Quiz { .. })
    }

    pub fn gold(&self) -> Option<&str> {
        match self {
            HitItem::Quiz { gold, .. } => gold.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub hit_id: String,
    pub items: Vec<HitItem>,
    pub workers_target: usize,
}

impl Hit {
    pub fn item(&self, item_id: &str) -> Option<&HitItem> {
        self.items.iter().find(|i| i.item_id() == item_id)
    }

    pub fn dialogue_count(&self) -> usize {
        self.items.iter().filter(|i| !i.is_quiz()).count()
    }

    /// The same HIT with quiz answers removed, as served to workers.
    pub fn public_view(&self) -> Hit {
        let mut h = self.clone();
        for it in &mut h.items {
            if let HitItem::Quiz { gold, .. } = it {
                *gold = None;
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialPolicy {
    /// Drop a final batch with fewer than the required candidates.
    Reject,
    /// Fill the final batch from the overflow pool when possible.
    Pad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HitConfig {
    pub dialogues_per_hit: usize,
    pub quizzes_per_hit: usize,
    pub workers_per_hit: usize,
    pub seed: u64,
    pub partial: PartialPolicy,
}

impl Default for HitConfig {
    fn default() -> Self {
        Self {
            dialogues_per_hit: DIALOGUES_PER_HIT,
            quizzes_per_hit: QUIZZES_PER_HIT,
            workers_per_hit: WORKERS_PER_HIT,
            seed: 23,
            partial: PartialPolicy::Reject,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HitBatch {
    pub hits: Vec<Hit>,
    /// Candidates left out because the final batch was incomplete.
    pub rejected: Vec<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HitError {
    #[error("quiz bank has {have} questions; each HIT needs {need}")]
    QuizBank { have: usize, need: usize },
    #[error("quiz {0} does not list its gold label among the suggestions")]
    BadQuiz(String),
}

/// Bundles candidates, in the given order, into HITs with interleaved
/// quizzes at seeded positions.
pub fn build_hits(
    candidates: &[HighConfidenceItem],
    overflow: &[HighConfidenceItem],
    quiz_bank: &[QuizQuestion],
    cfg: &HitConfig,
) -> Result<HitBatch, HitError> {
    if quiz_bank.len() < cfg.quizzes_per_hit {
        return Err(HitError::QuizBank { have: quiz_bank.len(), need: cfg.quizzes_per_hit });
    }
    if let Some(q) = quiz_bank.iter().find(|q| !q.suggestions.contains(&q.gold)) {
        return Err(HitError::BadQuiz(q.quiz_id.clone()));
    }
    let per = cfg.dialogues_per_hit.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batch = HitBatch::default();
    let mut extra = overflow.iter();
    for (n, chunk) in candidates.chunks(per).enumerate() {
        let mut chunk: Vec<&HighConfidenceItem> = chunk.iter().collect();
        if chunk.len() < per && cfg.partial == PartialPolicy::Pad {
            chunk.extend(extra.by_ref().take(per - chunk.len()));
        }
        if chunk.len() < per {
            batch.rejected.extend(chunk.iter().map(|c| c.item_id.clone()));
            continue;
        }
        let quizzes: Vec<&QuizQuestion> = quiz_bank.choose_multiple(&mut rng, cfg.quizzes_per_hit).collect();
        let total = per + cfg.quizzes_per_hit;
        let mut slots: Vec<usize> = (0..total).collect();
        slots.shuffle(&mut rng);
        let mut quiz_at: Vec<usize> = slots[..cfg.quizzes_per_hit].to_vec();
        quiz_at.sort_unstable();
        let mut dialogues = chunk.into_iter();
        let mut qs = quizzes.into_iter();
        let hit_id = format!("hit-{:05}", n + 1);
        let items = (0..total)
            .map(|pos| {
                if quiz_at.binary_search(&pos).is_ok() {
                    let q = qs.next().unwrap();
                    HitItem::Quiz {
                        item_id: format!("{hit_id}/quiz/{}", q.quiz_id),
                        situation: q.situation.clone(),
                        suggestions: q.suggestions.clone(),
                        gold: Some(q.gold.clone()),
                    }
                } else {
                    let d = dialogues.next().unwrap();
                    HitItem::Dialogue {
                        item_id: d.item_id.clone(),
                        dialogue_id: d.dialogue_id.clone(),
                        turn_index: d.turn_index,
                        turns: d.turns.clone(),
                        suggestions: d.suggestions.clone(),
                    }
                }
            })
            .collect();
        batch.hits.push(Hit { hit_id, items, workers_target: cfg.workers_per_hit });
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn candidates(n: usize) -> Vec<HighConfidenceItem> {
        (0..n)
            .map(|i| HighConfidenceItem {
                item_id: format!("d{i}#0"),
                dialogue_id: format!("d{i}"),
                turn_index: 0,
                turns: vec![format!("turn {i}")],
                label: "Sad".into(),
                confidence: 0.95,
                suggestions: vec![Suggestion { label: "Sad".into(), confidence: 0.95 }],
            })
            .collect()
    }

    pub(crate) fn quizzes(n: usize) -> Vec<QuizQuestion> {
        (0..n)
            .map(|i| QuizQuestion {
                quiz_id: format!("q{i}"),
                situation: format!("situation {i}"),
                gold: "Joyful".into(),
                suggestions: vec!["Joyful".into(), "Sad".into(), "Angry".into()],
            })
            .collect()
    }

    #[test]
    fn one_full_hit() {
        let b = build_hits(&candidates(15), &[], &quizzes(5), &HitConfig::default()).unwrap();
        assert_eq!(b.hits.len(), 1);
        let h = &b.hits[0];
        assert_eq!(h.items.len(), 20);
        assert_eq!(h.dialogue_count(), 15);
        let order: Vec<&str> = h.items.iter().filter(|i| !i.is_quiz()).map(|i| i.item_id()).collect();
        assert_eq!(order[0], "d0#0");
        assert_eq!(order[14], "d14#0");
        assert!(h.public_view().items.iter().all(|i| i.gold().is_none()));
    }

    #[test]
    fn full_scale_counts() {
        let c = candidates(10_250);
        let reject = build_hits(&c, &[], &quizzes(40), &HitConfig::default()).unwrap();
        assert_eq!(reject.hits.len(), 683);
        assert_eq!(reject.rejected.len(), 5);
        let pad = build_hits(&c, &candidates(20)[..], &quizzes(40), &HitConfig { partial: PartialPolicy::Pad, ..Default::default() }).unwrap();
        assert_eq!(pad.hits.len(), 684);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = build_hits(&candidates(45), &[], &quizzes(12), &HitConfig::default()).unwrap();
        let b = build_hits(&candidates(45), &[], &quizzes(12), &HitConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = build_hits(&candidates(45), &[], &quizzes(12), &HitConfig { seed: 99, ..Default::default() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn quiz_bank_checks() {
        assert!(matches!(build_hits(&candidates(15), &[], &quizzes(4), &HitConfig::default()), Err(HitError::QuizBank { .. })));
        let mut q = quizzes(5);
        q[2].suggestions = vec!["Sad".into()];
        assert_eq!(build_hits(&candidates(15), &[], &q, &HitConfig::default()), Err(HitError::BadQuiz("q2".into())));
    }
}
