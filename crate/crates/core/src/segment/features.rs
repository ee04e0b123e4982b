//! Hashed boundary features for the turn segmenter.
//!
//! Each instance yields fifteen feature families. Per side (`a` = earlier
//! sentence, `b` = later sentence): lemmatized unigrams and bigrams, first
//! and final token, first and final bigram. Shared: the same-block
//! indicator, the genre tag and a log-spaced density bucket. Quadratic
//! terms cross every pair of distinct families feature by feature, in the
//! fixed family order below, up to a per-instance cap.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lemma::Lemmatizer;
use crate::corpus::Sentence;
use crate::text::{combine, hash_feature, tokenize};

/// Family order used for crossing. Boundary-adjacent families come first so
/// that the cap trims the least informative crosses.
pub const FAMILIES: [&str; 15] = [
    "block", "genre", "density", "a.last", "a.lastbi", "b.first", "b.firstbi", "a.first", "a.firstbi",
    "b.last", "b.lastbi", "a.uni", "a.bi", "b.uni", "b.bi",
];

pub const DENSITY_BUCKETS: u32 = 8;
const DENSITY_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryLabel {
    SameTurn,
    NewTurn,
}

impl BoundaryLabel {
    pub fn sign(self) -> f32 {
        match self {
            Self::SameTurn => 1.0,
            Self::NewTurn => -1.0,
        }
    }
}

/// Two consecutive sentences and the document context around them.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryInstance {
    pub sent_a: Sentence,
    pub sent_b: Sentence,
    pub same_block: bool,
    pub genre: Option<String>,
    pub density: Option<f64>,
    pub label: Option<BoundaryLabel>,
}

/// Labeled boundary fixture line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub text_a: String,
    pub text_b: String,
    pub same_block: bool,
    pub genre: Option<String>,
    pub density: Option<f64>,
    pub label: BoundaryLabel,
}

impl From<&BoundaryRecord> for BoundaryInstance {
    fn from(r: &BoundaryRecord) -> Self {
        let sentence = |text: &str, block| Sentence {
            text: text.to_string(),
            block_index: block,
            order_in_block: 0,
            start_ms: None,
            end_ms: None,
        };
        BoundaryInstance {
            sent_a: sentence(&r.text_a, 1),
            sent_b: sentence(&r.text_b, if r.same_block { 1 } else { 2 }),
            same_block: r.same_block,
            genre: r.genre.clone(),
            density: r.density,
            label: Some(r.label),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub hash_bits: u8,
    pub max_crosses: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { hash_bits: 22, max_crosses: 2048 }
    }
}

/// Sparse vector over `2^hash_bits` dimensions, indices strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureVector {
    pub entries: Vec<(u32, f32)>,
    pub hash_bits: u8,
}

impl SparseFeatureVector {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn dot(&self, dense: &[f32]) -> f32 {
        self.entries.iter().map(|&(i, v)| dense[i as usize] * v).sum()
    }
}

/// Log-spaced bucket over (0, 4] sentences per second; bucket `k` covers
/// `(4·2^(k-8), 4·2^(k-7)]`, with everything below or above clamped.
pub fn density_bucket(density: f64) -> u32 {
    if !(density > 0.0) {
        return 0;
    }
    let k = (DENSITY_BUCKETS as f64 - 1.0 + (density / DENSITY_MAX).log2()).ceil();
    k.clamp(0.0, DENSITY_BUCKETS as f64 - 1.0) as u32
}

fn side_tokens(text: &str, lemmatizer: &dyn Lemmatizer) -> Vec<String> {
    tokenize(text).iter().map(|t| lemmatizer.lemma(&t.to_lowercase())).collect()
}

/// The base feature strings of one instance, grouped by family in
/// [`FAMILIES`] order.
pub fn base_families(inst: &BoundaryInstance, lemmatizer: &dyn Lemmatizer) -> Vec<(&'static str, Vec<String>)> {
    let a = side_tokens(&inst.sent_a.text, lemmatizer);
    let b = side_tokens(&inst.sent_b.text, lemmatizer);
    let bigrams = |t: &[String]| t.windows(2).map(|w| format!("{}_{}", w[0], w[1])).collect::<Vec<_>>();
    let (a_bi, b_bi) = (bigrams(&a), bigrams(&b));
    let one = |v: Option<&String>| v.cloned().into_iter().collect::<Vec<_>>();

    FAMILIES
        .iter()
        .map(|&fam| {
            let values = match fam {
                "block" => vec![if inst.same_block { "same" } else { "diff" }.to_string()],
                "genre" => inst.genre.iter().map(|g| g.to_lowercase()).collect(),
                "density" => inst.density.map(|d| density_bucket(d).to_string()).into_iter().collect(),
                "a.last" => one(a.last()),
                "a.lastbi" => one(a_bi.last()),
                "b.first" => one(b.first()),
                "b.firstbi" => one(b_bi.first()),
                "a.first" => one(a.first()),
                "a.firstbi" => one(a_bi.first()),
                "b.last" => one(b.last()),
                "b.lastbi" => one(b_bi.last()),
                "a.uni" => a.clone(),
                "a.bi" => a_bi.clone(),
                "b.uni" => b.clone(),
                "b.bi" => b_bi.clone(),
                _ => unreachable!(),
            };
            (fam, values)
        })
        .collect()
}

/// 64-bit keys of all base and crossed features, before index folding.
pub fn feature_keys(inst: &BoundaryInstance, lemmatizer: &dyn Lemmatizer, cfg: &FeatureConfig) -> Vec<u64> {
    let families: Vec<Vec<u64>> = base_families(inst, lemmatizer)
        .iter()
        .map(|(fam, values)| values.iter().map(|v| hash_feature(fam, v)).collect())
        .collect();
    let mut keys: Vec<u64> = families.iter().flatten().copied().collect();
    let mut crosses = 0usize;
    'outer: for i in 0..families.len() {
        for j in i + 1..families.len() {
            for &f in &families[i] {
                for &g in &families[j] {
                    if crosses == cfg.max_crosses {
                        break 'outer;
                    }
                    keys.push(combine(f, g));
                    crosses += 1;
                }
            }
        }
    }
    keys
}

pub(crate) fn fold(key: u64, hash_bits: u8) -> u32 {
    (key >> (64 - hash_bits as u32)) as u32
}

/// Hashes an instance into an L2-normalized sparse vector.
pub fn extract_boundary_features(
    inst: &BoundaryInstance,
    lemmatizer: &dyn Lemmatizer,
    cfg: &FeatureConfig,
) -> SparseFeatureVector {
    let mut counts: HashMap<u32, f32> = HashMap::new();
    for key in feature_keys(inst, lemmatizer, cfg) {
        *counts.entry(fold(key, cfg.hash_bits)).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|v| v * v).sum::<f32>().sqrt();
    let mut entries: Vec<(u32, f32)> = counts.into_iter().map(|(i, c)| (i, c / norm)).collect();
    entries.sort_unstable_by_key(|e| e.0);
    SparseFeatureVector { entries, hash_bits: cfg.hash_bits }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub distinct_features: usize,
    pub distinct_indices: usize,
    /// Fraction of distinct features that lost their own index to a collision.
    pub rate: f64,
}

/// Measures how many distinct features share an index over a set of instances.
pub fn collision_rate(instances: &[BoundaryInstance], lemmatizer: &dyn Lemmatizer, cfg: &FeatureConfig) -> CollisionStats {
    let mut keys = std::collections::HashSet::new();
    for inst in instances {
        keys.extend(feature_keys(inst, lemmatizer, cfg));
    }
    let indices: std::collections::HashSet<u32> = keys.iter().map(|&k| fold(k, cfg.hash_bits)).collect();
    let (nk, ni) = (keys.len(), indices.len());
    CollisionStats {
        distinct_features: nk,
        distinct_indices: ni,
        rate: if nk == 0 { 0.0 } else { (nk - ni) as f64 / nk as f64 },
    }
}
