use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabelError;

const DEFAULT_TOML: &str = include_str!("../../assets/labels.default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Emotion,
    Intent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub kind: LabelKind,
}

#[derive(Debug, Deserialize)]
struct TaxonomyFile {
    label: Vec<Label>,
}

/// Ordered label set; a label's position is its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTaxonomy {
    labels: Vec<Label>,
    index: HashMap<String, usize>,
}

impl LabelTaxonomy {
    pub fn new(labels: Vec<Label>) -> Result<Self, LabelError> {
        if labels.is_empty() {
            return Err(LabelError::Taxonomy("no labels".into()));
        }
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if l.name.trim().is_empty() {
                return Err(LabelError::Taxonomy(format!("label {i} has an empty name")));
            }
            if index.insert(l.name.clone(), i).is_some() {
                return Err(LabelError::Taxonomy(format!("duplicate label {}", l.name)));
            }
        }
        Ok(Self { labels, index })
    }

    /// 32 emotions then 9 intents.
    pub fn default_labels() -> Self {
        Self::from_toml(DEFAULT_TOML).expect("bundled taxonomy is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, LabelError> {
        let file: TaxonomyFile = toml::from_str(text).map_err(|e| LabelError::Taxonomy(e.to_string()))?;
        Self::new(file.label)
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id].name
    }

    pub fn kind(&self, id: usize) -> LabelKind {
        self.labels[id].kind
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize, LabelError> {
        self.id(name).ok_or_else(|| LabelError::UnknownLabel(name.to_string()))
    }

    /// Case-insensitive lookup, used for free-text matching.
    pub fn find_folded(&self, text: &str) -> Option<usize> {
        let t = text.trim();
        self.labels.iter().position(|l| l.name.eq_ignore_ascii_case(t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn of_kind(&self, kind: LabelKind) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.kind(i) == kind).collect()
    }
}

impl Default for LabelTaxonomy {
    fn default() -> Self {
        Self::default_labels()
    }
}
