use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::hits::Hit;
use crate::labeling::LabelTaxonomy;

/// The worker's answer: a taxonomy label or free text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Label(String),
    Custom(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub worker_id: String,
    pub hit_id: String,
    pub item_id: String,
    /// Set for dialogue items, absent for quizzes.
    #[serde(default)]
    pub dialogue_id: Option<String>,
    #[serde(default)]
    pub turn_index: Option<usize>,
    pub choice: Choice,
    #[serde(default)]
    pub chose_from_top3: bool,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp_ms: u64,
}

/// Case-folded, trimmed custom text.
pub fn normalize_custom(text: &str) -> String {
    text.trim().to_lowercase()
}

/// The label a vote counts for. Custom text equal to a taxonomy name
/// (ignoring case) counts as that name.
pub fn vote_key(choice: &Choice, taxonomy: &LabelTaxonomy) -> String {
    match choice {
        Choice::Label(l) => l.clone(),
        Choice::Custom(t) => match taxonomy.find_folded(t) {
            Some(id) => taxonomy.name(id).to_string(),
            None => normalize_custom(t),
        },
    }
}

pub const QUIZ_PASS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizGrade {
    pub worker_id: String,
    pub hit_id: String,
    pub answered: usize,
    pub correct: usize,
    pub passed: bool,
}

/// Quiz results per (worker, HIT); passing needs `QUIZ_PASS` correct.
pub fn grade_workers(records: &[AnnotationRecord], hits: &[Hit], taxonomy: &LabelTaxonomy) -> Vec<QuizGrade> {
    let hit_map: HashMap<&str, &Hit> = hits.iter().map(|h| (h.hit_id.as_str(), h)).collect();
    let mut grades: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for r in records {
        let Some(gold) = hit_map.get(r.hit_id.as_str()).and_then(|h| h.item(&r.item_id)).and_then(|i| i.gold()) else { continue };
        let e = grades.entry((r.worker_id.clone(), r.hit_id.clone())).or_default();
        e.0 += 1;
        if vote_key(&r.choice, taxonomy) == gold {
            e.1 += 1;
        }
    }
    grades
        .into_iter()
        .map(|((worker_id, hit_id), (answered, correct))| QuizGrade { worker_id, hit_id, answered, correct, passed: correct >= QUIZ_PASS })
        .collect()
}

pub fn grade_worker(worker_id: &str, records: &[AnnotationRecord], hits: &[Hit], taxonomy: &LabelTaxonomy) -> Vec<QuizGrade> {
    grade_workers(records, hits, taxonomy).into_iter().filter(|g| g.worker_id == worker_id).collect()
}

/// What happens to dialogue votes from a (worker, HIT) that failed the quiz gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatePolicy {
    #[default]
    Exclude,
    /// Count the vote at half weight.
    Downweight,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub item_id: String,
    pub dialogue_id: Option<String>,
    pub turn_index: Option<usize>,
    /// `None` when no label reached the quorum.
    pub label: Option<String>,
    pub agreement: f64,
    pub raters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSummary {
    pub items: usize,
    pub resolved: usize,
    /// Percent of items resolved.
    pub coverage: f64,
    pub unresolved_fraction: f64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("item {item} has {count} votes; at most {raters} expected")]
    TooManyVotes { item: String, count: usize, raters: usize },
    #[error("worker {worker} voted twice on item {item}")]
    RepeatedWorker { item: String, worker: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateConfig {
    pub quorum: usize,
    pub raters: usize,
    pub gate: GatePolicy,
    /// Let free-text answers count toward the quorum.
    pub count_custom: bool,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self { quorum: 2, raters: 3, gate: GatePolicy::Exclude, count_custom: true }
    }
}

/// Majority vote over dialogue items; quiz records are ignored.
///
/// `grades` decides which (worker, HIT) pairs failed the quiz gate.
pub fn aggregate_majority(
    records: &[AnnotationRecord],
    grades: &[QuizGrade],
    taxonomy: &LabelTaxonomy,
    cfg: &AggregateConfig,
) -> Result<(Vec<AggregationResult>, AggregationSummary), AggregateError> {
    let failed: HashSet<(&str, &str)> =
        grades.iter().filter(|g| !g.passed).map(|g| (g.worker_id.as_str(), g.hit_id.as_str())).collect();
    let mut by_item: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.dialogue_id.is_some()) {
        by_item.entry(&r.item_id).or_default().push(r);
    }
    let mut results = Vec::new();
    for (item, votes) in by_item {
        if votes.len() > cfg.raters {
            return Err(AggregateError::TooManyVotes { item: item.to_string(), count: votes.len(), raters: cfg.raters });
        }
        let mut workers = HashSet::new();
        for v in &votes {
            if !workers.insert(&v.worker_id) {
                return Err(AggregateError::RepeatedWorker { item: item.to_string(), worker: v.worker_id.clone() });
            }
        }
        let mut tally: BTreeMap<String, f64> = BTreeMap::new();
        for v in &votes {
            if !cfg.count_custom && matches!(v.choice, Choice::Custom(_)) {
                continue;
            }
            let w = match (failed.contains(&(v.worker_id.as_str(), v.hit_id.as_str())), cfg.gate) {
                (false, _) | (true, GatePolicy::Keep) => 1.0,
                (true, GatePolicy::Downweight) => 0.5,
                (true, GatePolicy::Exclude) => 0.0,
            };
            *tally.entry(vote_key(&v.choice, taxonomy)).or_default() += w;
        }
        let best = tally.iter().max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)));
        let (label, agreement) = match best {
            Some((l, &c)) if c >= cfg.quorum as f64 => (Some(l.clone()), c),
            Some((_, &c)) => (None, c),
            None => (None, 0.0),
        };
        results.push(AggregationResult {
            item_id: item.to_string(),
            dialogue_id: votes[0].dialogue_id.clone(),
            turn_index: votes[0].turn_index,
            label,
            agreement,
            raters: votes.len(),
        });
    }
    let resolved = results.iter().filter(|r| r.label.is_some()).count();
    let items = results.len();
    let coverage = if items == 0 { 0.0 } else { 100.0 * resolved as f64 / items as f64 };
    let summary = AggregationSummary { items, resolved, coverage, unresolved_fraction: 1.0 - coverage / 100.0 };
    Ok((results, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub items: usize,
    pub raters_per_item: usize,
    /// Items left out because their rating count differs from the common one.
    pub excluded: Vec<usize>,
}

/// Fleiss' kappa over an item × category count matrix.
///
/// Items whose total differs from the most common total are excluded and
/// listed. Perfect agreement with a single category in use gives 1.
pub fn fleiss_kappa(counts: &[Vec<u64>]) -> KappaResult {
    let mut freq: BTreeMap<u64, usize> = BTreeMap::new();
    for row in counts {
        *freq.entry(row.iter().sum()).or_default() += 1;
    }
    let n = freq.iter().max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0))).map(|(&n, _)| n).unwrap_or(0);
    let (kept, excluded): (Vec<usize>, Vec<usize>) = (0..counts.len()).partition(|&i| counts[i].iter().sum::<u64>() == n);
    if kept.is_empty() || n < 2 {
        return KappaResult { kappa: f64::NAN, items: 0, raters_per_item: n as usize, excluded: (0..counts.len()).collect() };
    }
    let k = counts[kept[0]].len();
    let nf = n as f64;
    let big_n = kept.len() as f64;
    let mut p_j = vec![0f64; k];
    let mut p_bar = 0.0;
    for &i in &kept {
        let row = &counts[i];
        let s: f64 = row.iter().map(|&c| (c * c) as f64).sum();
        p_bar += (s - nf) / (nf * (nf - 1.0));
        for (j, &c) in row.iter().enumerate() {
            p_j[j] += c as f64;
        }
    }
    p_bar /= big_n;
    let p_e: f64 = p_j.iter().map(|&c| (c / (big_n * nf)).powi(2)).sum();
    let kappa = if (1.0 - p_e).abs() < 1e-15 { 1.0 } else { (p_bar - p_e) / (1.0 - p_e) };
    KappaResult { kappa, items: kept.len(), raters_per_item: n as usize, excluded }
}

/// Builds the count matrix from dialogue-item votes and computes kappa.
pub fn kappa_from_records(records: &[AnnotationRecord], taxonomy: &LabelTaxonomy) -> KappaResult {
    let mut cats: BTreeMap<String, usize> = BTreeMap::new();
    let mut by_item: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.dialogue_id.is_some()) {
        let key = vote_key(&r.choice, taxonomy);
        let next = cats.len();
        cats.entry(key.clone()).or_insert(next);
        by_item.entry(&r.item_id).or_default().push(key);
    }
    let k = cats.len();
    let matrix: Vec<Vec<u64>> = by_item
        .values()
        .map(|votes| {
            let mut row = vec![0u64; k];
            for v in votes {
                row[cats[v]] += 1;
            }
            row
        })
        .collect();
    fleiss_kappa(&matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewLabel {
    pub label: String,
    pub count: usize,
    /// Up to three item ids, in record order.
    pub examples: Vec<String>,
}

/// Free-text labels that are not taxonomy names, most frequent first.
pub fn harvest_new_labels(records: &[AnnotationRecord], taxonomy: &LabelTaxonomy) -> Vec<NewLabel> {
    let mut found: HashMap<String, NewLabel> = HashMap::new();
    for r in records {
        let Choice::Custom(text) = &r.choice else { continue };
        if taxonomy.find_folded(text).is_some() {
            continue;
        }
        let label = normalize_custom(text);
        if label.is_empty() {
            continue;
        }
        let e = found.entry(label.clone()).or_insert(NewLabel { label, count: 0, examples: Vec::new() });
        e.count += 1;
        if e.examples.len() < 3 && !e.examples.contains(&r.item_id) {
            e.examples.push(r.item_id.clone());
        }
    }
    let mut out: Vec<NewLabel> = found.into_values().collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
    out
}
