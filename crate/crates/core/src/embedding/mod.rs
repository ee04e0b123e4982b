//! Turn and dialogue embeddings, cosine similarity, and label expansion by
//! nearest labeled neighbor.

mod search;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::half_decay_weights;
use crate::remote::{bounded_map, JsonClient, RemoteError, RetryPolicy};
use crate::text::{hash_feature, mix64, vocab_tokens};

pub use search::{expand_by_similarity, expand_naive, SearchOptions, SimilarityMatch};
pub use store::{EmbeddingSet, LabeledSet};

pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("no turn embeddings given")]
    Empty,
    #[error("invalid embedding file: {0}")]
    BadFile(String),
    #[error("{0}")]
    Protocol(String),
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Builtin,
    Remote,
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn source(&self) -> EmbeddingSource;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Random-sign projection of hashed word counts, L2-normalized.
///
/// Each distinct token owns a pseudo-random ±1 vector derived from its hash
/// and the seed; a text's embedding is the count-weighted sum of its
/// tokens' vectors. Texts sharing words get correlated vectors, texts with
/// disjoint words are close to orthogonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for BuiltinEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM, seed: 0x5eed }
    }
}

impl BuiltinEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut tokens = vocab_tokens(text);
        if tokens.is_empty() {
            tokens.push("\u{0}empty".to_string());
        }
        let mut acc = vec![0f32; self.dim];
        for t in &tokens {
            let h = hash_feature("emb", t) ^ self.seed;
            let mut bits = 0u64;
            for (i, x) in acc.iter_mut().enumerate() {
                if i % 64 == 0 {
                    bits = mix64(h.wrapping_add((i / 64) as u64 + 1));
                }
                *x += if bits & 1 == 1 { 1.0 } else { -1.0 };
                bits >>= 1;
            }
        }
        normalize(&mut acc);
        acc
    }
}

impl Embedder for BuiltinEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn source(&self) -> EmbeddingSource {
        EmbeddingSource::Builtin
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        use rayon::prelude::*;
        Ok(texts.par_iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f32>>,
}

/// Client for an external sentence-embedding server: `POST {endpoint}/embed`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub url: String,
    pub dim: usize,
    pub batch_size: usize,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, dim: usize, policy: RetryPolicy) -> Self {
        Self {
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            dim,
            batch_size: 64,
            client: JsonClient::new(policy),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn source(&self) -> EmbeddingSource {
        EmbeddingSource::Remote
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let batches: Vec<&[String]> = texts.chunks(self.batch_size.max(1)).collect();
        let out = bounded_map(&batches, self.client.policy.concurrency, |batch| {
            let resp: EmbedResponse = self.client.post(&self.url, &EmbedRequest { texts: batch.to_vec() })?;
            if resp.vectors.len() != batch.len() {
                return Err(EmbedError::Protocol(format!("sent {} texts, got {} vectors", batch.len(), resp.vectors.len())));
            }
            for v in &resp.vectors {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch { expected: self.dim, got: v.len() });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::Protocol("non-finite component".into()));
                }
            }
            Ok(resp.vectors)
        })?;
        Ok(out.into_iter().flatten().collect())
    }
}

pub fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
}

/// Half-decay weighted mean of a dialogue's turn vectors (oldest first):
/// three turns give `(4/7)v3 + (2/7)v2 + (1/7)v1`.
pub fn embed_dialogue<V, T>(turns: &[V]) -> Result<Vec<f64>, EmbedError>
where
    V: AsRef<[T]>,
    T: Copy + Into<f64>,
{
    let first = turns.first().ok_or(EmbedError::Empty)?.as_ref().len();
    let weights = half_decay_weights(turns.len());
    let mut out = vec![0f64; first];
    for (v, w) in turns.iter().rev().zip(weights) {
        let v = v.as_ref();
        if v.len() != first {
            return Err(EmbedError::DimensionMismatch { expected: first, got: v.len() });
        }
        out.iter_mut().zip(v).for_each(|(o, &x)| *o += w * x.into());
    }
    Ok(out)
}

/// `a·b / (‖a‖‖b‖)`, clamped to [-1, 1].
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Dialogue embeddings for each dialogue, from per-turn embeddings.
pub fn embed_dialogues(
    dialogues: &[crate::dialogue::Dialogue],
    embedder: &dyn Embedder,
) -> Result<EmbeddingSet, EmbedError> {
    let texts: Vec<String> = dialogues.iter().flat_map(|d| d.turns.iter().map(|t| t.text.clone())).collect();
    let mut vectors = embedder.embed(&texts)?.into_iter();
    let mut set = EmbeddingSet::new(embedder.dim());
    for d in dialogues {
        let turns: Vec<Vec<f32>> = vectors.by_ref().take(d.turns.len()).collect();
        let v = embed_dialogue(&turns)?;
        set.push(&d.dialogue_id, &v.iter().map(|&x| x as f32).collect::<Vec<_>>())?;
    }
    Ok(set)
}
