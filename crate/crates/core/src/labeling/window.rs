use serde::{Deserialize, Serialize};

use crate::dialogue::Dialogue;

pub const DEFAULT_HISTORY: usize = 3;

/// Half-decay weights for `m` turns, newest first.
///
/// Each step back halves the weight; the result sums to one, so three
/// turns give `[4/7, 2/7, 1/7]`.
pub fn half_decay_weights(m: usize) -> Vec<f64> {
    if m == 0 {
        return Vec::new();
    }
    let raw: Vec<f64> = (0..m).map(|j| 0.5f64.powi(j as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// A target turn and up to `k` preceding turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub target: String,
    /// Oldest first.
    pub history: Vec<String>,
}

impl ContextWindow {
    pub fn new(target: impl Into<String>, history: Vec<String>) -> Self {
        Self { target: target.into(), history }
    }

    pub fn single(target: impl Into<String>) -> Self {
        Self::new(target, Vec::new())
    }

    /// Window for turn `index` of `dialogue` with at most `k` history turns.
    pub fn for_turn(dialogue: &Dialogue, index: usize, k: usize) -> Self {
        let start = index.saturating_sub(k);
        Self {
            target: dialogue.turns[index].text.clone(),
            history: dialogue.turns[start..index].iter().map(|t| t.text.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.history.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Target first, then history from newest to oldest.
    pub fn turns_newest_first(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.target.as_str()).chain(self.history.iter().rev().map(String::as_str))
    }

    pub fn weights_newest_first(&self) -> Vec<f64> {
        half_decay_weights(self.len())
    }
}
