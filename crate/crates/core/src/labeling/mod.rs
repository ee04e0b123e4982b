//! Label taxonomy, turn classifiers (built-in and remote), and
//! confidence-based selection of emotional dialogues.

mod ngram;
mod taxonomy;
mod window;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Dialogue, Provenance};
use crate::remote::{bounded_map, JsonClient, RemoteError, RetryPolicy};

pub use ngram::{train_classifier, ClassifierReport, NGramHyper, NGramSoftmaxModel, TrainingExample};
pub use taxonomy::{Label, LabelKind, LabelTaxonomy};
pub use window::{half_decay_weights, ContextWindow, DEFAULT_HISTORY};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("model has {model} labels but the taxonomy has {taxonomy} (or their order differs)")]
    LabelCountMismatch { model: usize, taxonomy: usize },
    #[error("invalid model file: {0}")]
    BadModel(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// A probability distribution over label ids plus its argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub top: usize,
    pub confidence: f64,
    pub distribution: Vec<f64>,
}

impl Prediction {
    /// Validates finiteness, range and total mass; ties go to the lowest id.
    pub fn from_distribution(distribution: Vec<f64>) -> Result<Self, LabelError> {
        if distribution.is_empty() {
            return Err(LabelError::InvalidDistribution("empty".into()));
        }
        if let Some(x) = distribution.iter().find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0) {
            return Err(LabelError::InvalidDistribution(format!("probability {x} outside [0, 1]")));
        }
        let total: f64 = distribution.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(LabelError::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let mut top = 0;
        for (i, &p) in distribution.iter().enumerate() {
            if p > distribution[top] {
                top = i;
            }
        }
        Ok(Self { top, confidence: distribution[top], distribution })
    }

    /// The `k` most probable label ids, descending, ties by id.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.distribution.len()).collect();
        idx.sort_by(|&a, &b| self.distribution[b].total_cmp(&self.distribution[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| (i, self.distribution[i])).collect()
    }
}

pub trait Labeler: Send + Sync {
    fn num_labels(&self) -> usize;

    fn predict(&self, window: &ContextWindow) -> Result<Prediction, LabelError>;

    fn predict_many(&self, windows: &[ContextWindow]) -> Result<Vec<Prediction>, LabelError> {
        windows.par_iter().map(|w| self.predict(w)).collect()
    }
}

/// One weighted turn of a remote classification request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTurn {
    pub text: String,
    pub weight: f64,
}

/// `POST {endpoint}/classify` request body. Turns run newest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub turns: Vec<WeightedTurn>,
}

impl ClassifyRequest {
    pub fn from_window(window: &ContextWindow) -> Self {
        let turns = window
            .turns_newest_first()
            .zip(window.weights_newest_first())
            .map(|(t, w)| WeightedTurn { text: t.to_string(), weight: w })
            .collect();
        Self { turns }
    }
}

/// Response body: parallel arrays of label names and probabilities.
/// Labels missing from the response get probability zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub labels: Vec<String>,
    pub probabilities: Vec<f64>,
}

impl ClassifyResponse {
    pub fn into_prediction(self, taxonomy: &LabelTaxonomy) -> Result<Prediction, LabelError> {
        let protocol = |m: String| LabelError::Remote(RemoteError::Protocol(m));
        if self.labels.len() != self.probabilities.len() {
            return Err(protocol(format!("{} labels but {} probabilities", self.labels.len(), self.probabilities.len())));
        }
        let mut dist = vec![0.0; taxonomy.len()];
        let mut seen = vec![false; taxonomy.len()];
        for (name, p) in self.labels.iter().zip(&self.probabilities) {
            let id = taxonomy.id(name).ok_or_else(|| protocol(format!("unknown label {name:?}")))?;
            if std::mem::replace(&mut seen[id], true) {
                return Err(protocol(format!("label {name:?} repeated")));
            }
            dist[id] = *p;
        }
        Prediction::from_distribution(dist).map_err(|e| protocol(e.to_string()))
    }
}

/// Client for an external classifier speaking the `/classify` protocol.
#[derive(Debug, Clone)]
pub struct RemoteLabeler {
    pub url: String,
    taxonomy: LabelTaxonomy,
    client: JsonClient,
}

impl RemoteLabeler {
    /// `endpoint` is the server base URL; `/classify` is appended.
    pub fn new(endpoint: &str, taxonomy: LabelTaxonomy, policy: RetryPolicy) -> Self {
        Self {
            url: format!("{}/classify", endpoint.trim_end_matches('/')),
            taxonomy,
            client: JsonClient::new(policy),
        }
    }
}

impl Labeler for RemoteLabeler {
    fn num_labels(&self) -> usize {
        self.taxonomy.len()
    }

    fn predict(&self, window: &ContextWindow) -> Result<Prediction, LabelError> {
        let resp: ClassifyResponse = self.client.post(&self.url, &ClassifyRequest::from_window(window))?;
        resp.into_prediction(&self.taxonomy)
    }

    fn predict_many(&self, windows: &[ContextWindow]) -> Result<Vec<Prediction>, LabelError> {
        bounded_map(windows, self.client.policy.concurrency, |w| self.predict(w))
    }
}

/// Per-turn predictions for every dialogue, in dialogue and turn order.
pub fn label_dialogues(dialogues: &[Dialogue], labeler: &dyn Labeler, history: usize) -> Result<Vec<Vec<Prediction>>, LabelError> {
    let windows: Vec<ContextWindow> = dialogues
        .iter()
        .flat_map(|d| (0..d.turns.len()).map(move |i| ContextWindow::for_turn(d, i, history)))
        .collect();
    let mut flat = labeler.predict_many(&windows)?.into_iter();
    Ok(dialogues.iter().map(|d| flat.by_ref().take(d.turns.len()).collect()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceStrategy {
    Mean,
    Min,
    Max,
    /// Mean of per-turn confidence, with intent-labeled turns counted at half.
    #[default]
    EmotionWeightedMean,
}

pub const INTENT_DISCOUNT: f64 = 0.5;

pub fn dialogue_confidence(predictions: &[Prediction], taxonomy: &LabelTaxonomy, strategy: ConfidenceStrategy) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let conf = predictions.iter().map(|p| p.confidence);
    match strategy {
        ConfidenceStrategy::Mean => conf.sum::<f64>() / predictions.len() as f64,
        ConfidenceStrategy::Min => conf.fold(f64::INFINITY, f64::min),
        ConfidenceStrategy::Max => conf.fold(f64::NEG_INFINITY, f64::max),
        ConfidenceStrategy::EmotionWeightedMean => {
            predictions
                .iter()
                .map(|p| match taxonomy.kind(p.top) {
                    LabelKind::Emotion => p.confidence,
                    LabelKind::Intent => p.confidence * INTENT_DISCOUNT,
                })
                .sum::<f64>()
                / predictions.len() as f64
        }
    }
}

/// Keeps the `n` dialogues with the highest dialogue confidence (ties by
/// id), marked as emotional. Returns each with its confidence.
pub fn filter_emotional(
    dialogues: &[Dialogue],
    predictions: &[Vec<Prediction>],
    taxonomy: &LabelTaxonomy,
    n: usize,
    strategy: ConfidenceStrategy,
) -> Vec<(Dialogue, f64)> {
    if n > dialogues.len() {
        log::warn!("requested {n} emotional dialogues but only {} exist; keeping all", dialogues.len());
    }
    let mut scored: Vec<(usize, f64)> = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| (i, dialogue_confidence(p, taxonomy, strategy)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| dialogues[a.0].dialogue_id.cmp(&dialogues[b.0].dialogue_id)));
    scored
        .into_iter()
        .take(n)
        .map(|(i, c)| {
            let mut d = dialogues[i].clone();
            d.provenance = Provenance::Emotional;
            (d, c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub label: String,
    pub confidence: f64,
}

/// A confidently labeled turn with all turns that precede it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighConfidenceItem {
    pub item_id: String,
    pub dialogue_id: String,
    /// 0-based index of the labeled turn; `turns` holds turns 0..=turn_index.
    pub turn_index: usize,
    pub turns: Vec<String>,
    pub label: String,
    pub confidence: f64,
    pub suggestions: Vec<Suggestion>,
}

pub fn item_id(dialogue_id: &str, turn_index: usize) -> String {
    format!("{dialogue_id}#{turn_index}")
}

/// Turns whose confidence is at least `threshold`, each with its history.
pub fn select_high_confidence(
    dialogues: &[Dialogue],
    predictions: &[Vec<Prediction>],
    taxonomy: &LabelTaxonomy,
    threshold: f64,
) -> Vec<HighConfidenceItem> {
    let mut out = Vec::new();
    for (d, preds) in dialogues.iter().zip(predictions) {
        for (i, p) in preds.iter().enumerate() {
            if p.confidence < threshold {
                continue;
            }
            out.push(HighConfidenceItem {
                item_id: item_id(&d.dialogue_id, i),
                dialogue_id: d.dialogue_id.clone(),
                turn_index: i,
                turns: d.turns[..=i].iter().map(|t| t.text.clone()).collect(),
                label: taxonomy.name(p.top).to_string(),
                confidence: p.confidence,
                suggestions: p
                    .top_k(3)
                    .into_iter()
                    .map(|(l, c)| Suggestion { label: taxonomy.name(l).to_string(), confidence: c })
                    .collect(),
            });
        }
    }
    out
}

/// One line of a prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub label: String,
    pub confidence: f64,
}

pub fn prediction_records(dialogues: &[Dialogue], predictions: &[Vec<Prediction>], taxonomy: &LabelTaxonomy) -> Vec<PredictionRecord> {
    dialogues
        .iter()
        .zip(predictions)
        .flat_map(|(d, preds)| {
            preds.iter().enumerate().map(move |(i, p)| PredictionRecord {
                dialogue_id: d.dialogue_id.clone(),
                turn_index: i,
                label: taxonomy.name(p.top).to_string(),
                confidence: p.confidence,
            })
        })
        .collect()
}
