//! Averaged n-gram embeddings followed by a linear softmax layer.
//!
//! Every word unigram and bigram of every turn in the window hashes to one
//! of `2^hash_bits` buckets. The hidden vector is the weighted mean of the
//! bucket embeddings, where each n-gram carries its turn's half-decay
//! weight. Embedding rows start from a seeded uniform draw in
//! `[-1/dim, 1/dim]` and are materialized only when training touches
//! them, so an untouched table costs nothing. The output matrix starts at
//! zero, which makes an untrained model exactly uniform.
//!
//! Model file layout (little-endian):
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | `b"SUBTNGM1"`                          |
//! | dim, hash_bits, ngram, history | u32 × 4                   |
//! | epochs           | u32                                    |
//! | learning_rate    | f64                                    |
//! | seed             | u64                                    |
//! | label count L    | u32, then L × (u32 length + UTF-8 name) |
//! | row count R      | u64, then R × (u32 bucket + dim × f32) |
//! | output matrix    | L × dim × f32, row-major by label      |

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ContextWindow, LabelError, LabelTaxonomy, Labeler, Prediction};
use crate::text::{combine, hash_feature, mix64, tokenize};

const MAGIC: &[u8; 8] = b"SUBTNGM1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NGramHyper {
    pub dim: usize,
    pub hash_bits: u8,
    /// 1 = unigrams, 2 = unigrams + bigrams.
    pub ngram: u8,
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
    /// History turns fed with each target turn.
    pub history: usize,
}

impl Default for NGramHyper {
    fn default() -> Self {
        Self { dim: 64, hash_bits: 21, ngram: 2, epochs: 5, learning_rate: 0.1, seed: 7, history: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub window: ContextWindow,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub epoch_train_loss: Vec<f64>,
    pub epoch_validation_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept; 0 when no epoch ran.
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramSoftmaxModel {
    pub hyper: NGramHyper,
    labels: Vec<String>,
    rows: HashMap<u32, Vec<f32>>,
    /// labels × dim.
    output: Vec<f32>,
}

impl NGramSoftmaxModel {
    /// An untrained model; predicts the uniform distribution.
    pub fn new(taxonomy: &LabelTaxonomy, hyper: NGramHyper) -> Self {
        Self {
            hyper,
            labels: taxonomy.names().into_iter().map(String::from).collect(),
            rows: HashMap::new(),
            output: vec![0.0; taxonomy.len() * hyper.dim],
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn materialized_rows(&self) -> usize {
        self.rows.len()
    }

    /// Fails unless the model was trained on exactly this label list.
    pub fn check_taxonomy(&self, taxonomy: &LabelTaxonomy) -> Result<(), LabelError> {
        if self.labels.iter().map(String::as_str).ne(taxonomy.names()) {
            return Err(LabelError::LabelCountMismatch { model: self.labels.len(), taxonomy: taxonomy.len() });
        }
        Ok(())
    }

    /// Hashed n-gram buckets with their normalized weights.
    pub fn features(&self, window: &ContextWindow) -> Vec<(u32, f32)> {
        let shift = 64 - self.hyper.hash_bits as u32;
        let mut out = Vec::new();
        for (turn, w) in window.turns_newest_first().zip(window.weights_newest_first()) {
            let hashes: Vec<u64> = tokenize(turn).iter().map(|t| hash_feature("w", &t.to_lowercase())).collect();
            for (i, &h) in hashes.iter().enumerate() {
                out.push(((h >> shift) as u32, w));
                if self.hyper.ngram >= 2 {
                    if let Some(&next) = hashes.get(i + 1) {
                        out.push(((combine(h, next) >> shift) as u32, w));
                    }
                }
            }
        }
        let total: f64 = out.iter().map(|f| f.1).sum();
        out.into_iter().map(|(b, w)| (b, (w / total) as f32)).collect()
    }

    fn initial_row(&self, bucket: u32) -> Vec<f32> {
        let dim = self.hyper.dim;
        let scale = 1.0 / dim as f64;
        let base = mix64(self.hyper.seed ^ ((bucket as u64) << 20));
        (0..dim)
            .map(|i| {
                let r = mix64(base.wrapping_add(i as u64));
                let u = (r >> 11) as f64 / (1u64 << 53) as f64;
                ((2.0 * u - 1.0) * scale) as f32
            })
            .collect()
    }

    fn hidden(&self, feats: &[(u32, f32)]) -> Vec<f32> {
        let mut h = vec![0f32; self.hyper.dim];
        for &(b, w) in feats {
            match self.rows.get(&b) {
                Some(row) => h.iter_mut().zip(row).for_each(|(x, r)| *x += w * r),
                None => h.iter_mut().zip(self.initial_row(b)).for_each(|(x, r)| *x += w * r),
            }
        }
        h
    }

    fn distribution(&self, h: &[f32]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .output
            .chunks_exact(self.hyper.dim)
            .map(|o| o.iter().zip(h).map(|(a, b)| (a * b) as f64).sum())
            .collect();
        softmax(&logits)
    }

    pub fn predict_window(&self, window: &ContextWindow) -> Prediction {
        let h = self.hidden(&self.features(window));
        Prediction::from_distribution(self.distribution(&h)).expect("softmax output is a distribution")
    }

    /// Mean cross-entropy.
    pub fn loss(&self, data: &[(Vec<(u32, f32)>, usize)]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        data.iter()
            .map(|(f, y)| -self.distribution(&self.hidden(f))[*y].max(1e-300).ln())
            .sum::<f64>()
            / data.len() as f64
    }

    fn sgd_step(&mut self, feats: &[(u32, f32)], y: usize, lr: f32) -> f64 {
        let dim = self.hyper.dim;
        let h = self.hidden(feats);
        let p = self.distribution(&h);
        let mut grad_h = vec![0f32; dim];
        for (k, o) in self.output.chunks_exact_mut(dim).enumerate() {
            let g = (p[k] - if k == y { 1.0 } else { 0.0 }) as f32;
            if g == 0.0 {
                continue;
            }
            for d in 0..dim {
                grad_h[d] += g * o[d];
                o[d] -= lr * g * h[d];
            }
        }
        for &(b, w) in feats {
            if !self.rows.contains_key(&b) {
                let init = self.initial_row(b);
                self.rows.insert(b, init);
            }
            let row = self.rows.get_mut(&b).unwrap();
            row.iter_mut().zip(&grad_h).for_each(|(r, g)| *r -= lr * w * g);
        }
        -p[y].max(1e-300).ln()
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let h = &self.hyper;
        w.write_all(MAGIC)?;
        for v in [h.dim as u32, h.hash_bits as u32, h.ngram as u32, h.history as u32, h.epochs] {
            w.write_u32::<LittleEndian>(v)?;
        }
        w.write_f64::<LittleEndian>(h.learning_rate)?;
        w.write_u64::<LittleEndian>(h.seed)?;
        w.write_u32::<LittleEndian>(self.labels.len() as u32)?;
        for l in &self.labels {
            w.write_u32::<LittleEndian>(l.len() as u32)?;
            w.write_all(l.as_bytes())?;
        }
        let mut buckets: Vec<_> = self.rows.keys().copied().collect();
        buckets.sort_unstable();
        w.write_u64::<LittleEndian>(buckets.len() as u64)?;
        for b in buckets {
            w.write_u32::<LittleEndian>(b)?;
            for &x in &self.rows[&b] {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        for &x in &self.output {
            w.write_f32::<LittleEndian>(x)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, LabelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LabelError::BadModel("wrong magic".into()));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let hash_bits = r.read_u32::<LittleEndian>()?;
        let ngram = r.read_u32::<LittleEndian>()?;
        let history = r.read_u32::<LittleEndian>()? as usize;
        let epochs = r.read_u32::<LittleEndian>()?;
        if dim == 0 || dim > 4096 || !(1..=31).contains(&hash_bits) || !(1..=2).contains(&ngram) {
            return Err(LabelError::BadModel(format!("implausible header dim={dim} hash_bits={hash_bits} ngram={ngram}")));
        }
        let learning_rate = r.read_f64::<LittleEndian>()?;
        let seed = r.read_u64::<LittleEndian>()?;
        let n_labels = r.read_u32::<LittleEndian>()? as usize;
        if n_labels == 0 || n_labels > 100_000 {
            return Err(LabelError::BadModel(format!("label count {n_labels}")));
        }
        let mut labels = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            let len = r.read_u32::<LittleEndian>()? as usize;
            if len > 4096 {
                return Err(LabelError::BadModel("label name too long".into()));
            }
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            labels.push(String::from_utf8(buf).map_err(|_| LabelError::BadModel("label name is not UTF-8".into()))?);
        }
        let n_rows = r.read_u64::<LittleEndian>()?;
        if n_rows > 1u64 << hash_bits {
            return Err(LabelError::BadModel("more rows than buckets".into()));
        }
        let mut rows = HashMap::with_capacity(n_rows as usize);
        for _ in 0..n_rows {
            let b = r.read_u32::<LittleEndian>()?;
            let mut row = vec![0f32; dim];
            r.read_f32_into::<LittleEndian>(&mut row)?;
            rows.insert(b, row);
        }
        let mut output = vec![0f32; n_labels * dim];
        r.read_f32_into::<LittleEndian>(&mut output)?;
        if output.iter().chain(rows.values().flatten()).any(|x| !x.is_finite()) {
            return Err(LabelError::BadModel("non-finite parameters".into()));
        }
        let hyper = NGramHyper { dim, hash_bits: hash_bits as u8, ngram: ngram as u8, epochs, learning_rate, seed, history };
        Ok(Self { hyper, labels, rows, output })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl Labeler for NGramSoftmaxModel {
    fn num_labels(&self) -> usize {
        self.labels.len()
    }

    fn predict(&self, window: &ContextWindow) -> Result<Prediction, LabelError> {
        Ok(self.predict_window(window))
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Trains by SGD on shuffled epochs with a linearly decaying step.
///
/// With a validation set, the parameters from the epoch with the lowest
/// validation loss are returned; otherwise those from the last epoch.
pub fn train_classifier(
    train: &[TrainingExample],
    taxonomy: &LabelTaxonomy,
    hyper: &NGramHyper,
    validation: Option<&[TrainingExample]>,
) -> Result<(NGramSoftmaxModel, ClassifierReport), LabelError> {
    if train.is_empty() {
        return Err(LabelError::EmptyTrainingSet);
    }
    let mut model = NGramSoftmaxModel::new(taxonomy, *hyper);
    let encode = |set: &[TrainingExample]| -> Result<Vec<(Vec<(u32, f32)>, usize)>, LabelError> {
        set.iter().map(|e| Ok((model.features(&e.window), taxonomy.require(&e.label)?))).collect()
    };
    // Canonical order, so the result depends on the example set and the seed only.
    let mut sorted: Vec<&TrainingExample> = train.iter().collect();
    sorted.sort_by(|a, b| (&a.label, &a.window.target, &a.window.history).cmp(&(&b.label, &b.window.target, &b.window.history)));
    let sorted: Vec<TrainingExample> = sorted.into_iter().cloned().collect();
    let data = encode(&sorted)?;
    let val = validation.map(encode).transpose()?;

    let mut report = ClassifierReport::default();
    let mut best: Option<(f64, NGramSoftmaxModel)> = None;
    let total_steps = (data.len() as u64 * hyper.epochs as u64).max(1);
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..hyper.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for &i in &order {
            let lr = hyper.learning_rate * (1.0 - step as f64 / total_steps as f64);
            step += 1;
            let (f, y) = &data[i];
            loss += model.sgd_step(f, *y, lr as f32);
        }
        report.epoch_train_loss.push(loss / data.len() as f64);
        if let Some(val) = &val {
            let vl = model.loss(val);
            report.epoch_validation_loss.push(vl);
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, model.clone()));
                report.selected_epoch = epoch as usize + 1;
            }
        } else {
            report.selected_epoch = epoch as usize + 1;
        }
    }
    if let Some((_, m)) = best {
        model = m;
    }
    Ok((model, report))
}
