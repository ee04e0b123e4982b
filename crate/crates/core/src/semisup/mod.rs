//! Balanced splitting, evaluation, self-labeling, and the four-stage
//! training schedule that grows the training set with similar and
//! self-labeled dialogues.

mod metrics;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Dialogue;
use crate::embedding::{embed_dialogue, expand_by_similarity, EmbedError, Embedder, EmbeddingSet, LabeledSet, SearchOptions};
use crate::labeling::{
    train_classifier, ContextWindow, LabelError, LabelTaxonomy, Labeler, NGramHyper, NGramSoftmaxModel, Prediction,
    TrainingExample,
};
use crate::text::hash_feature;

pub use metrics::{ClassScores, MetricsReport};

#[derive(Debug, Error)]
pub enum SemiError {
    #[error("{count} test ids also appear in training data (first: {first})")]
    Leak { count: usize, first: String },
    #[error("no labeled data")]
    NoData,
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        partial: Box<IterationReport>,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemSource {
    Crowd,
    Similar,
    SelfLabeled,
    SimilarToSelf,
}

/// A labeled turn with every turn before it in its dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub id: String,
    pub dialogue_id: String,
    /// Oldest first; the last entry is the labeled turn.
    pub turns: Vec<String>,
    pub label: String,
    pub source: ItemSource,
}

impl LabeledItem {
    pub fn window(&self, history: usize) -> ContextWindow {
        let n = self.turns.len();
        let start = (n - 1).saturating_sub(history);
        ContextWindow::new(self.turns[n - 1].clone(), self.turns[start..n - 1].to_vec())
    }

    pub fn example(&self, history: usize) -> TrainingExample {
        TrainingExample { window: self.window(history), label: self.label.clone() }
    }

    /// The whole dialogue as a labeled item on its final turn.
    pub fn from_dialogue(d: &Dialogue, label: &str, source: ItemSource) -> Self {
        Self {
            id: crate::labeling::item_id(&d.dialogue_id, d.turns.len() - 1),
            dialogue_id: d.dialogue_id.clone(),
            turns: d.turns.iter().map(|t| t.text.clone()).collect(),
            label: label.to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub warnings: Vec<String>,
}

/// Splits labeled items per class.
///
/// Classes with fewer than 3 items go entirely to training. With
/// `balanced`, every other class contributes the same number of test items,
/// `round(test_fraction × smallest eligible class)` (at least 1); otherwise
/// each class contributes `round(test_fraction × size)`. Validation takes
/// `round(validation_fraction × size)` per class, and training keeps at
/// least one item of every class.
pub fn split_balanced(items: &[LabeledItem], fractions: [f64; 3], balanced: bool, seed: u64) -> Result<DatasetSplit, SemiError> {
    if fractions.iter().any(|f| *f < 0.0 || !f.is_finite()) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SemiError::BadFractions(fractions));
    }
    if items.is_empty() {
        return Err(SemiError::NoData);
    }
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for it in items {
        by_class.entry(&it.label).or_default().push(&it.id);
    }
    let smallest = by_class.values().map(Vec::len).filter(|&n| n >= 3).min().unwrap_or(0);
    let q_balanced = ((fractions[2] * smallest as f64).round() as usize).max(1);
    let mut split = DatasetSplit::default();
    for (class, mut ids) in by_class {
        ids.sort_unstable();
        if ids.len() < 3 {
            split.warnings.push(format!("class {class} has {} items; all used for training", ids.len()));
            split.train.extend(ids.iter().map(|s| s.to_string()));
            continue;
        }
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ hash_feature("split", class)));
        let n = ids.len();
        let n_test = if balanced { q_balanced } else { (fractions[2] * n as f64).round() as usize }.min(n - 1);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - 1 - n_test);
        split.test.extend(ids[..n_test].iter().map(|s| s.to_string()));
        split.validation.extend(ids[n_test..n_test + n_val].iter().map(|s| s.to_string()));
        split.train.extend(ids[n_test + n_val..].iter().map(|s| s.to_string()));
    }
    for w in &split.warnings {
        log::warn!("{w}");
    }
    Ok(split)
}

/// Scores `labeler` on `test`, refusing any item whose id is in `train_ids`.
pub fn evaluate(
    labeler: &dyn Labeler,
    taxonomy: &LabelTaxonomy,
    test: &[LabeledItem],
    train_ids: &HashSet<String>,
    history: usize,
) -> Result<MetricsReport, SemiError> {
    let leaked: Vec<&str> = test.iter().filter(|t| train_ids.contains(&t.id)).map(|t| t.id.as_str()).collect();
    if let Some(first) = leaked.first() {
        return Err(SemiError::Leak { count: leaked.len(), first: first.to_string() });
    }
    let gold: Vec<usize> = test.iter().map(|t| taxonomy.require(&t.label)).collect::<Result<_, _>>()?;
    let windows: Vec<ContextWindow> = test.iter().map(|t| t.window(history)).collect();
    let predicted: Vec<usize> = labeler.predict_many(&windows)?.into_iter().map(|p| p.top).collect();
    Ok(MetricsReport::from_pairs(&gold, &predicted, taxonomy.len()))
}

/// A candidate turn for self-labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub item: LabeledItem,
    pub prediction: Prediction,
}

/// Per class, the `per_class` most confident candidates whose argmax is
/// that class (ties by id). Each candidate lands in at most one class.
pub fn self_label(candidates: &[Candidate], taxonomy: &LabelTaxonomy, per_class: usize) -> Vec<(LabeledItem, f64)> {
    let mut by_class: Vec<Vec<&Candidate>> = vec![Vec::new(); taxonomy.len()];
    for c in candidates {
        by_class[c.prediction.top].push(c);
    }
    let mut out = Vec::new();
    for (class, mut list) in by_class.into_iter().enumerate() {
        if list.is_empty() && per_class > 0 {
            log::warn!("self-labeling: no candidate predicted as {}", taxonomy.name(class));
        }
        list.sort_by(|a, b| b.prediction.confidence.total_cmp(&a.prediction.confidence).then_with(|| a.item.id.cmp(&b.item.id)));
        for c in list.into_iter().take(per_class) {
            let mut item = c.item.clone();
            item.label = taxonomy.name(class).to_string();
            item.source = ItemSource::SelfLabeled;
            out.push((item, c.prediction.confidence));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Base,
    Similar,
    SelfLabeled,
    SimilarToSelf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub kind: StageKind,
    /// Similarity threshold for the similarity stages.
    #[serde(default)]
    pub tau: f64,
    /// Items per class for the self-labeling stage.
    #[serde(default)]
    pub per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub stages: Vec<StagePlan>,
    pub fractions: [f64; 3],
    pub balanced: bool,
    pub seed: u64,
    pub hyper: NGramHyper,
    pub search: SearchOptions,
}

impl Default for IterationPlan {
    fn default() -> Self {
        Self {
            stages: vec![
                StagePlan { kind: StageKind::Base, tau: 0.0, per_class: 0 },
                StagePlan { kind: StageKind::Similar, tau: 0.92, per_class: 0 },
                StagePlan { kind: StageKind::SelfLabeled, tau: 0.0, per_class: 100 },
                StagePlan { kind: StageKind::SimilarToSelf, tau: 0.9, per_class: 0 },
            ],
            fractions: [0.6, 0.2, 0.2],
            balanced: true,
            seed: 11,
            hyper: NGramHyper { epochs: 10, ..NGramHyper::default() },
            search: SearchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub kind: StageKind,
    pub description: String,
    pub added: usize,
    pub train_size: usize,
    pub selected_epoch: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub split: DatasetSplit,
    pub stages: Vec<StageResult>,
}

impl IterationReport {
    /// Plain-text table: one row per stage.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let width = self.stages.iter().map(|r| r.description.len()).max().unwrap_or(0).max("Training data".len());
        s.push_str(&format!("{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}\n", "Training data", "Precis.", "Recall", "F1", "Acc."));
        for r in &self.stages {
            let m = &r.metrics;
            s.push_str(&format!(
                "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}\n",
                r.description, m.precision, m.recall, m.macro_f1, m.accuracy
            ));
        }
        s
    }
}

fn describe(kind: StageKind, added: usize) -> String {
    match kind {
        StageKind::Base => format!("crowd-annotated dialogues ({added})"),
        StageKind::Similar => format!("+ similar dialogues ({added})"),
        StageKind::SelfLabeled => format!("+ self-labeled dialogues ({added})"),
        StageKind::SimilarToSelf => format!("+ similar self-labeled dialogues ({added})"),
    }
}

fn embed_items(items: &[LabeledItem], embedder: &dyn Embedder) -> Result<EmbeddingSet, EmbedError> {
    let texts: Vec<String> = items.iter().flat_map(|i| i.turns.iter().cloned()).collect();
    let mut vecs = embedder.embed(&texts)?.into_iter();
    let mut set = EmbeddingSet::new(embedder.dim());
    for it in items {
        let turns: Vec<Vec<f32>> = vecs.by_ref().take(it.turns.len()).collect();
        let v: Vec<f32> = embed_dialogue(&turns)?.into_iter().map(|x| x as f32).collect();
        set.push(&it.id, &v)?;
    }
    Ok(set)
}

/// Dialogues from the pool matched to `sources` at `tau`, returned as items.
fn similar_items(
    sources: &[LabeledItem],
    pool: &[LabeledItem],
    tau: f64,
    source: ItemSource,
    embedder: &dyn Embedder,
    search: &SearchOptions,
) -> Result<Vec<LabeledItem>, EmbedError> {
    if sources.is_empty() || pool.is_empty() {
        return Ok(Vec::new());
    }
    let labeled = LabeledSet { set: embed_items(sources, embedder)?, labels: sources.iter().map(|s| s.label.clone()).collect() };
    let unlabeled = embed_items(pool, embedder)?;
    let matches = expand_by_similarity(&labeled, &unlabeled, None, tau, search)?;
    let by_id: std::collections::HashMap<&str, &LabeledItem> = pool.iter().map(|p| (p.id.as_str(), p)).collect();
    Ok(matches
        .into_iter()
        .map(|m| {
            let mut it = by_id[m.unlabeled_id.as_str()].clone();
            it.label = m.label;
            it.source = source;
            it
        })
        .collect())
}

/// Inputs to the staged schedule.
pub struct SemiSupData<'a> {
    pub taxonomy: &'a LabelTaxonomy,
    /// Crowd-labeled items.
    pub labeled: &'a [LabeledItem],
    /// Unlabeled dialogues; any dialogue that has a crowd-labeled item is ignored.
    pub unlabeled: &'a [Dialogue],
}

/// Trains one model per stage on a growing training set and evaluates each
/// on the same held-out test split. Returns the models with the report.
pub fn run_iterations(
    plan: &IterationPlan,
    data: &SemiSupData<'_>,
    embedder: &dyn Embedder,
) -> Result<(Vec<NGramSoftmaxModel>, IterationReport), SemiError> {
    let tax = data.taxonomy;
    let split = split_balanced(data.labeled, plan.fractions, plan.balanced, plan.seed)?;
    let pick = |ids: &[String]| -> Vec<LabeledItem> {
        let set: HashSet<&str> = ids.iter().map(String::as_str).collect();
        data.labeled.iter().filter(|i| set.contains(i.id.as_str())).cloned().collect()
    };
    let (train0, validation, test) = (pick(&split.train), pick(&split.validation), pick(&split.test));
    let crowd_dialogues: HashSet<&str> = data.labeled.iter().map(|i| i.dialogue_id.as_str()).collect();
    let mut pool: Vec<LabeledItem> = data
        .unlabeled
        .iter()
        .filter(|d| !d.turns.is_empty() && !crowd_dialogues.contains(d.dialogue_id.as_str()))
        .map(|d| LabeledItem::from_dialogue(d, "", ItemSource::Similar))
        .collect();
    let history = plan.hyper.history;
    let val_examples: Vec<TrainingExample> = validation.iter().map(|i| i.example(history)).collect();

    let mut report = IterationReport { split, stages: Vec::new() };
    let mut models = Vec::new();
    let mut train: Vec<LabeledItem> = Vec::new();
    let mut self_labeled: Vec<LabeledItem> = Vec::new();

    for stage in &plan.stages {
        let name = format!("{:?}", stage.kind);
        let fail = |report: &IterationReport, e: Box<dyn std::error::Error + Send + Sync>| SemiError::Stage {
            stage: name.clone(),
            partial: Box::new(report.clone()),
            source: e,
        };
        let added: Vec<LabeledItem> = match stage.kind {
            StageKind::Base => train0.clone(),
            StageKind::Similar => similar_items(&train0, &pool, stage.tau, ItemSource::Similar, embedder, &plan.search)
                .map_err(|e| fail(&report, e.into()))?,
            StageKind::SelfLabeled => {
                let model: &NGramSoftmaxModel = models.last().ok_or_else(|| fail(&report, "self-labeling needs a trained model".into()))?;
                let candidates = self_label_candidates(data.unlabeled, &pool, model, history).map_err(|e| fail(&report, e.into()))?;
                let picked: Vec<LabeledItem> = self_label(&candidates, tax, stage.per_class).into_iter().map(|(i, _)| i).collect();
                self_labeled.extend(picked.iter().cloned());
                picked
            }
            StageKind::SimilarToSelf => {
                similar_items(&self_labeled, &pool, stage.tau, ItemSource::SimilarToSelf, embedder, &plan.search)
                    .map_err(|e| fail(&report, e.into()))?
            }
        };
        let used: HashSet<&str> = added.iter().map(|i| i.dialogue_id.as_str()).collect();
        pool.retain(|p| !used.contains(p.dialogue_id.as_str()));
        train.extend(added.iter().cloned());

        let examples: Vec<TrainingExample> = train.iter().map(|i| i.example(history)).collect();
        let (model, cr) = train_classifier(&examples, tax, &plan.hyper, (!val_examples.is_empty()).then_some(&val_examples[..]))
            .map_err(|e| fail(&report, e.into()))?;
        let train_ids: HashSet<String> = train.iter().map(|i| i.id.clone()).collect();
        let metrics = evaluate(&model, tax, &test, &train_ids, history).map_err(|e| fail(&report, e.into()))?;
        log::info!("stage {name}: +{} items, train {}, acc {:.2}", added.len(), train.len(), metrics.accuracy);
        report.stages.push(StageResult {
            kind: stage.kind,
            description: describe(stage.kind, added.len()),
            added: added.len(),
            train_size: train.len(),
            selected_epoch: cr.selected_epoch,
            metrics,
        });
        models.push(model);
    }
    Ok((models, report))
}

/// Every turn of every pool dialogue, with the model's prediction.
fn self_label_candidates(
    dialogues: &[Dialogue],
    pool: &[LabeledItem],
    model: &NGramSoftmaxModel,
    history: usize,
) -> Result<Vec<Candidate>, LabelError> {
    let in_pool: HashSet<&str> = pool.iter().map(|p| p.dialogue_id.as_str()).collect();
    let mut items = Vec::new();
    for d in dialogues.iter().filter(|d| in_pool.contains(d.dialogue_id.as_str())) {
        for i in 0..d.turns.len() {
            items.push(LabeledItem {
                id: crate::labeling::item_id(&d.dialogue_id, i),
                dialogue_id: d.dialogue_id.clone(),
                turns: d.turns[..=i].iter().map(|t| t.text.clone()).collect(),
                label: String::new(),
                source: ItemSource::SelfLabeled,
            });
        }
    }
    let windows: Vec<ContextWindow> = items.iter().map(|i| i.window(history)).collect();
    let preds = model.predict_many(&windows)?;
    Ok(items.into_iter().zip(preds).map(|(item, prediction)| Candidate { item, prediction }).collect())
}
