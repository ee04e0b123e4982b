//! Hinge-loss linear segmenter trained by stochastic subgradient descent.
//!
//! Model file layout (little-endian):
//!
//! | field          | type        |
//! |----------------|-------------|
//! | magic          | `b"SUBTSEG1"` |
//! | version        | u32 (= 1)   |
//! | hash_bits      | u32         |
//! | bias           | f32         |
//! | epochs         | u32         |
//! | learning_rate  | f64         |
//! | lambda         | f64         |
//! | seed           | u64         |
//! | weight count   | u64 (= 2^hash_bits) |
//! | weights        | f32 × count |

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{BoundaryLabel, SparseFeatureVector};
use super::SegmentError;

const MAGIC: &[u8; 8] = b"SUBTSEG1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterHyper {
    pub epochs: u32,
    pub learning_rate: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SegmenterHyper {
    fn default() -> Self {
        Self { epochs: 10, learning_rate: 0.5, lambda: 1e-5, seed: 17 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSegmenter {
    pub weights: Vec<f32>,
    pub bias: f32,
    pub hash_bits: u8,
    pub training_meta: SegmenterHyper,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Regularized hinge objective after each epoch.
    pub epoch_objective: Vec<f64>,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

impl LinearSegmenter {
    pub fn score(&self, x: &SparseFeatureVector) -> f32 {
        x.dot(&self.weights) + self.bias
    }

    /// A score of exactly zero merges (same turn).
    pub fn predict(&self, x: &SparseFeatureVector) -> BoundaryLabel {
        if self.score(x) >= 0.0 {
            BoundaryLabel::SameTurn
        } else {
            BoundaryLabel::NewTurn
        }
    }

    pub fn accuracy(&self, data: &[(SparseFeatureVector, BoundaryLabel)]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let ok = data.iter().filter(|(x, y)| self.predict(x) == *y).count();
        ok as f64 / data.len() as f64
    }

    pub fn objective(&self, data: &[(SparseFeatureVector, BoundaryLabel)]) -> f64 {
        let hinge: f64 = data
            .iter()
            .map(|(x, y)| (1.0 - y.sign() as f64 * self.score(x) as f64).max(0.0))
            .sum::<f64>()
            / data.len().max(1) as f64;
        let sq: f64 = self.weights.iter().map(|&w| (w as f64) * (w as f64)).sum();
        hinge + 0.5 * self.training_meta.lambda * sq
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.hash_bits as u32)?;
        w.write_f32::<LittleEndian>(self.bias)?;
        w.write_u32::<LittleEndian>(self.training_meta.epochs)?;
        w.write_f64::<LittleEndian>(self.training_meta.learning_rate)?;
        w.write_f64::<LittleEndian>(self.training_meta.lambda)?;
        w.write_u64::<LittleEndian>(self.training_meta.seed)?;
        w.write_u64::<LittleEndian>(self.weights.len() as u64)?;
        let mut buf = Vec::with_capacity(self.weights.len() * 4);
        for &x in &self.weights {
            buf.write_f32::<LittleEndian>(x)?;
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, SegmentError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SegmentError::BadModel("wrong magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(SegmentError::BadModel(format!("unsupported version {version}")));
        }
        let hash_bits = r.read_u32::<LittleEndian>()?;
        if !(1..=30).contains(&hash_bits) {
            return Err(SegmentError::BadModel(format!("hash_bits {hash_bits} out of range")));
        }
        let bias = r.read_f32::<LittleEndian>()?;
        let training_meta = SegmenterHyper {
            epochs: r.read_u32::<LittleEndian>()?,
            learning_rate: r.read_f64::<LittleEndian>()?,
            lambda: r.read_f64::<LittleEndian>()?,
            seed: r.read_u64::<LittleEndian>()?,
        };
        let n = r.read_u64::<LittleEndian>()?;
        if n != 1u64 << hash_bits {
            return Err(SegmentError::BadModel(format!("weight count {n} does not match hash_bits {hash_bits}")));
        }
        let mut raw = vec![0u8; n as usize * 4];
        r.read_exact(&mut raw)?;
        let weights: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(SegmentError::BadModel("non-finite parameters".into()));
        }
        Ok(Self { weights, bias, hash_bits: hash_bits as u8, training_meta })
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SegmentError> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Minimizes `mean hinge + λ/2 ‖w‖²` with step size `η₀ / (1 + η₀ λ t)`.
///
/// The weight vector is stored as `scale · v` so that the per-step L2
/// shrinkage costs O(1) instead of O(2^h).
pub fn train_segmenter(
    train: &[(SparseFeatureVector, BoundaryLabel)],
    hyper: &SegmenterHyper,
    validation: Option<&[(SparseFeatureVector, BoundaryLabel)]>,
) -> Result<(LinearSegmenter, TrainReport), SegmentError> {
    if train.len() < 2 {
        return Err(SegmentError::TooFewInstances(train.len()));
    }
    let hash_bits = train[0].0.hash_bits;
    if train.iter().any(|(x, _)| x.hash_bits != hash_bits) {
        return Err(SegmentError::HashBitsMismatch { model: hash_bits, features: train.iter().find(|(x, _)| x.hash_bits != hash_bits).unwrap().0.hash_bits });
    }
    let positives = train.iter().filter(|(_, y)| *y == BoundaryLabel::SameTurn).count();
    if positives == 0 || positives == train.len() {
        let only = if positives == 0 { "new_turn" } else { "same_turn" };
        return Err(SegmentError::SingleClass(only));
    }

    let dim = 1usize << hash_bits;
    let mut v = vec![0f64; dim];
    let mut scale = 1f64;
    let mut bias = 0f64;
    let lambda = hyper.lambda;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut t = 0u64;
    let mut report = TrainReport::default();

    let snapshot = |v: &[f64], scale: f64, bias: f64| LinearSegmenter {
        weights: v.iter().map(|&x| (x * scale) as f32).collect(),
        bias: bias as f32,
        hash_bits,
        training_meta: *hyper,
    };

    for epoch in 0..hyper.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &train[i];
            let y = y.sign() as f64;
            let eta = hyper.learning_rate / (1.0 + hyper.learning_rate * lambda * t as f64);
            t += 1;
            let score: f64 = x.entries.iter().map(|&(j, val)| v[j as usize] * val as f64).sum::<f64>() * scale + bias;
            scale *= 1.0 - eta * lambda;
            if y * score < 1.0 {
                for &(j, val) in &x.entries {
                    v[j as usize] += eta * y * val as f64 / scale;
                }
                bias += eta * y;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        report.epoch_objective.push(snapshot(&v, scale, bias).objective(train));
    }

    let model = snapshot(&v, scale, bias);
    report.train_accuracy = model.accuracy(train);
    report.validation_accuracy = validation.map(|val| model.accuracy(val));
    Ok((model, report))
}
