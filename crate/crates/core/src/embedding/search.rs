//! Exact nearest-labeled-neighbor search.
//!
//! The blocked search screens all pairs with a single-precision dot product
//! over unit-normalized copies, keeps every labeled row within `SCREEN_EPS`
//! of the running best, then rescores those few survivors with the
//! double-precision [`cosine`]. The screening error of a unit-vector dot
//! product is far below `SCREEN_EPS`, so the winner and its score are the
//! same as the naive double loop's.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cosine, EmbedError, EmbeddingSet, LabeledSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatch {
    pub unlabeled_id: String,
    pub labeled_id: String,
    pub cosine: f64,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    /// Unlabeled rows per parallel task.
    pub tile_rows: usize,
    /// Labeled rows scanned per pass over a tile.
    pub block_rows: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { tile_rows: 64, block_rows: 128 }
    }
}

fn screen_eps(dim: usize) -> f32 {
    (1e-3f32).max(dim as f32 * 2e-7)
}

#[inline]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 16];
    let ca = a.chunks_exact(16);
    let cb = b.chunks_exact(16);
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..16 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f32>() + tail
}

fn unit_rows(set: &EmbeddingSet) -> (Vec<f32>, Vec<bool>) {
    let mut data = set.data.clone();
    let mut valid = Vec::with_capacity(set.len());
    for row in data.chunks_exact_mut(set.dim.max(1)) {
        let n = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        valid.push(n > 0.0);
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
        }
    }
    (data, valid)
}

/// Better match: higher cosine, then smaller labeled id.
fn beats(cos: f64, id: &str, best: Option<(f64, &str)>) -> bool {
    match best {
        None => true,
        Some((bc, bid)) => cos > bc || (cos == bc && id < bid),
    }
}

fn check(labeled: &LabeledSet, unlabeled: &EmbeddingSet, classes: Option<&[String]>) -> Result<(), EmbedError> {
    if labeled.set.dim != unlabeled.dim {
        return Err(EmbedError::DimensionMismatch { expected: labeled.set.dim, got: unlabeled.dim });
    }
    if labeled.labels.len() != labeled.set.len() {
        return Err(EmbedError::Protocol(format!("{} labels for {} labeled rows", labeled.labels.len(), labeled.set.len())));
    }
    if let Some(c) = classes {
        if c.len() != unlabeled.len() {
            return Err(EmbedError::Protocol(format!("{} classes for {} unlabeled rows", c.len(), unlabeled.len())));
        }
    }
    Ok(())
}

/// For each unlabeled row, its most similar labeled row, emitted when the
/// cosine is at least `tau`. Ties go to the smaller labeled id.
///
/// With `unlabeled_classes`, an unlabeled row only considers labeled rows
/// of the same class.
pub fn expand_by_similarity(
    labeled: &LabeledSet,
    unlabeled: &EmbeddingSet,
    unlabeled_classes: Option<&[String]>,
    tau: f64,
    opts: &SearchOptions,
) -> Result<Vec<SimilarityMatch>, EmbedError> {
    check(labeled, unlabeled, unlabeled_classes)?;
    let dim = unlabeled.dim;
    if dim == 0 || labeled.set.is_empty() || unlabeled.is_empty() {
        return Ok(Vec::new());
    }
    let eps = screen_eps(dim);
    let (lab, lab_ok) = unit_rows(&labeled.set);
    let (unl, unl_ok) = unit_rows(unlabeled);
    let tile = opts.tile_rows.max(1);
    let block = opts.block_rows.max(1);
    let n_lab = labeled.set.len();

    let per_tile: Vec<Vec<SimilarityMatch>> = (0..unlabeled.len())
        .collect::<Vec<_>>()
        .par_chunks(tile)
        .map(|rows| {
            let mut best = vec![f32::NEG_INFINITY; rows.len()];
            let mut cands: Vec<Vec<(usize, f32)>> = vec![Vec::new(); rows.len()];
            for b0 in (0..n_lab).step_by(block) {
                let b1 = (b0 + block).min(n_lab);
                for (k, &u) in rows.iter().enumerate() {
                    if !unl_ok[u] {
                        continue;
                    }
                    let uv = &unl[u * dim..(u + 1) * dim];
                    for l in b0..b1 {
                        if !lab_ok[l] {
                            continue;
                        }
                        if let Some(c) = unlabeled_classes {
                            if c[u] != labeled.labels[l] {
                                continue;
                            }
                        }
                        let s = dot_f32(uv, &lab[l * dim..(l + 1) * dim]);
                        if s >= best[k] - eps {
                            if s > best[k] {
                                best[k] = s;
                                cands[k].retain(|&(_, cs)| cs >= s - eps);
                            }
                            cands[k].push((l, s));
                        }
                    }
                }
            }
            let mut out = Vec::new();
            for (k, &u) in rows.iter().enumerate() {
                if (best[k] as f64) < tau - eps as f64 {
                    continue;
                }
                let mut win: Option<(f64, usize)> = None;
                for &(l, _) in &cands[k] {
                    let c = cosine(unlabeled.row(u), labeled.set.row(l)).expect("rows are non-zero");
                    if beats(c, &labeled.set.ids[l], win.map(|(wc, wl)| (wc, labeled.set.ids[wl].as_str()))) {
                        win = Some((c, l));
                    }
                }
                if let Some((c, l)) = win {
                    if c >= tau {
                        out.push(SimilarityMatch {
                            unlabeled_id: unlabeled.ids[u].clone(),
                            labeled_id: labeled.set.ids[l].clone(),
                            cosine: c,
                            label: labeled.labels[l].clone(),
                        });
                    }
                }
            }
            out
        })
        .collect();
    Ok(per_tile.into_iter().flatten().collect())
}

/// Reference double loop over every pair, double precision throughout.
pub fn expand_naive(
    labeled: &LabeledSet,
    unlabeled: &EmbeddingSet,
    unlabeled_classes: Option<&[String]>,
    tau: f64,
) -> Result<Vec<SimilarityMatch>, EmbedError> {
    check(labeled, unlabeled, unlabeled_classes)?;
    let mut out = Vec::new();
    for u in 0..unlabeled.len() {
        let mut win: Option<(f64, usize)> = None;
        for l in 0..labeled.set.len() {
            if unlabeled_classes.is_some_and(|c| c[u] != labeled.labels[l]) {
                continue;
            }
            let Ok(c) = cosine(unlabeled.row(u), labeled.set.row(l)) else { continue };
            if beats(c, &labeled.set.ids[l], win.map(|(wc, wl)| (wc, labeled.set.ids[wl].as_str()))) {
                win = Some((c, l));
            }
        }
        if let Some((c, l)) = win.filter(|(c, _)| *c >= tau) {
            out.push(SimilarityMatch {
                unlabeled_id: unlabeled.ids[u].clone(),
                labeled_id: labeled.set.ids[l].clone(),
                cosine: c,
                label: labeled.labels[l].clone(),
            });
        }
    }
    Ok(out)
}
