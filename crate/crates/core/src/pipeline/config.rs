use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::analytics::{DEFAULT_FLOW_DEPTH, DEFAULT_LAYER_TOP_N, DEFAULT_ROOTS};
use crate::annotation::simulate::CrowdConfig;
use crate::annotation::{AggregateConfig, GatePolicy, HitConfig, PartialPolicy};
use crate::dialogue::CleaningConfig;
use crate::embedding::DEFAULT_DIM;
use crate::labeling::{ConfidenceStrategy, NGramHyper};
use crate::readability::FrequencyMode;
use crate::remote::{env_var, RetryPolicy};
use crate::segment::SegmenterHyper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of `.srt` / `.xml` files plus optional sidecars.
    pub corpus: PathBuf,
    pub work: PathBuf,
    /// Label taxonomy TOML; empty means the bundled 41 labels.
    pub labels: PathBuf,
    /// Sidecar names, relative to `corpus`.
    pub metadata: String,
    pub boundaries: String,
    pub weak_seed: String,
    pub quiz_bank: String,
    pub lexicon: String,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "data/mini-corpus".into(),
            work: "work".into(),
            labels: PathBuf::new(),
            metadata: "metadata.tsv".into(),
            boundaries: "boundaries.jsonl".into(),
            weak_seed: "weak_seed.jsonl".into(),
            quiz_bank: "quiz_bank.jsonl".into(),
            lexicon: "lexicon.tsv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub language: String,
    pub lossy_utf8: bool,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { language: "en".into(), lossy_utf8: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub hash_bits: u8,
    pub max_crosses: usize,
    pub epochs: u32,
    pub learning_rate: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SegmentSection {
    fn default() -> Self {
        let h = SegmenterHyper::default();
        Self { hash_bits: 22, max_crosses: 2048, epochs: h.epochs, learning_rate: h.learning_rate, lambda: h.lambda, seed: h.seed }
    }
}

impl SegmentSection {
    pub fn hyper(&self) -> SegmenterHyper {
        SegmenterHyper { epochs: self.epochs, learning_rate: self.learning_rate, lambda: self.lambda, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DialogueSection {
    pub gap_ms: u64,
}

impl Default for DialogueSection {
    fn default() -> Self {
        Self { gap_ms: crate::dialogue::DEFAULT_GAP_MS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadabilitySection {
    pub alpha: f64,
    pub w_d: f64,
    pub mode: FrequencyMode,
    /// Candidates kept per predicted class.
    pub top_k: usize,
}

impl Default for ReadabilitySection {
    fn default() -> Self {
        Self { alpha: 87.0, w_d: 0.04, mode: FrequencyMode::Relative, top_k: 250 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Builtin,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelerSection {
    pub kind: ServiceKind,
    /// Base URL of the remote labeler; `SUBTALK_LABELER_URL` overrides it.
    pub endpoint: String,
    pub history: usize,
    pub hyper: NGramHyper,
}

impl Default for LabelerSection {
    fn default() -> Self {
        Self { kind: ServiceKind::Builtin, endpoint: String::new(), history: 0, hyper: NGramHyper::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    /// Share of cleaned dialogues kept as emotional, used when `keep` is 0.
    pub keep_fraction: f64,
    pub keep: usize,
    pub strategy: ConfidenceStrategy,
    /// Minimum turn confidence for an annotation candidate.
    pub threshold: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self { keep_fraction: 0.25, keep: 0, strategy: ConfidenceStrategy::default(), threshold: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationSection {
    pub dialogues_per_hit: usize,
    pub quizzes_per_hit: usize,
    pub workers_per_hit: usize,
    pub seed: u64,
    pub partial: PartialPolicy,
    pub quorum: usize,
    pub gate: GatePolicy,
    pub count_custom: bool,
    pub addr: String,
    /// Front-end bundle served under `/ui`; empty disables the route.
    pub static_dir: PathBuf,
    /// Answer HITs with the scripted crowd instead of serving HTTP.
    pub simulate: bool,
    pub crowd: CrowdConfig,
}

impl Default for AnnotationSection {
    fn default() -> Self {
        let h = HitConfig::default();
        let a = AggregateConfig::default();
        Self {
            dialogues_per_hit: h.dialogues_per_hit,
            quizzes_per_hit: h.quizzes_per_hit,
            workers_per_hit: h.workers_per_hit,
            seed: h.seed,
            partial: h.partial,
            quorum: a.quorum,
            gate: GatePolicy::Exclude,
            count_custom: a.count_custom,
            addr: "127.0.0.1:8080".into(),
            static_dir: PathBuf::new(),
            simulate: false,
            crowd: CrowdConfig::default(),
        }
    }
}

impl AnnotationSection {
    pub fn hit_config(&self) -> HitConfig {
        HitConfig {
            dialogues_per_hit: self.dialogues_per_hit,
            quizzes_per_hit: self.quizzes_per_hit,
            workers_per_hit: self.workers_per_hit,
            seed: self.seed,
            partial: self.partial,
        }
    }

    pub fn aggregate_config(&self) -> AggregateConfig {
        AggregateConfig { quorum: self.quorum, raters: self.workers_per_hit, gate: self.gate, count_custom: self.count_custom }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: ServiceKind,
    /// `SUBTALK_EMBEDDER_URL` overrides it.
    pub endpoint: String,
    pub dim: usize,
    pub seed: u64,
    pub tile_rows: usize,
    pub block_rows: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self { kind: ServiceKind::Builtin, endpoint: String::new(), dim: DEFAULT_DIM, seed: 0x5eed, tile_rows: 64, block_rows: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiSection {
    pub tau_similar: f64,
    pub per_class: usize,
    pub tau_self: f64,
    pub fractions: [f64; 3],
    pub balanced: bool,
    pub seed: u64,
    pub hyper: NGramHyper,
}

impl Default for SemiSection {
    fn default() -> Self {
        Self {
            tau_similar: 0.92,
            per_class: 100,
            tau_self: 0.9,
            fractions: [0.6, 0.2, 0.2],
            balanced: true,
            seed: 11,
            hyper: NGramHyper { epochs: 10, ..NGramHyper::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsSection {
    pub roots: Vec<String>,
    pub max_depth: usize,
    /// Labels kept per flow layer on export; 0 keeps all.
    pub top_n: usize,
}

impl Default for AnalyticsSection {
    fn default() -> Self {
        Self { roots: DEFAULT_ROOTS.map(String::from).to_vec(), max_depth: DEFAULT_FLOW_DEPTH, top_n: DEFAULT_LAYER_TOP_N }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub ingest: IngestSection,
    pub segment: SegmentSection,
    pub dialogues: DialogueSection,
    pub clean: CleaningConfig,
    pub readability: ReadabilitySection,
    pub labeler: LabelerSection,
    pub filter: FilterSection,
    pub annotation: AnnotationSection,
    pub embedding: EmbeddingSection,
    pub semisup: SemiSection,
    pub analytics: AnalyticsSection,
    pub remote: RetryPolicy,
}

fn parse_scalar(raw: &str) -> toml::Value {
    // Reuse the TOML grammar for numbers, booleans, arrays and quoted strings;
    // anything else is a bare string.
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides (dotted keys) and
    /// validates the result.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut table: toml::Table = text.parse().map_err(|e| PipelineError::Validation(format!("config: {e}")))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| PipelineError::Validation(format!("override {o:?} is not key=value")))?;
            let parts: Vec<&str> = key.trim().split('.').collect();
            let mut cur = &mut table;
            for p in &parts[..parts.len() - 1] {
                let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
                cur = entry.as_table_mut().ok_or_else(|| PipelineError::Validation(format!("override {key}: {p} is not a section")))?;
            }
            cur.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
        }
        let cfg: PipelineConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| PipelineError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_with(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.corpus);
        fix(&mut self.paths.work);
        fix(&mut self.paths.labels);
        fix(&mut self.annotation.static_dir);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn labeler_endpoint(&self) -> String {
        env_var("LABELER_URL").unwrap_or_else(|| self.labeler.endpoint.clone())
    }

    pub fn embedder_endpoint(&self) -> String {
        env_var("EMBEDDER_URL").unwrap_or_else(|| self.embedding.endpoint.clone())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut errs: Vec<String> = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        check(self.dialogues.gap_ms > 0, "dialogues.gap_ms must be positive");
        check(self.clean.min_chars <= self.clean.max_chars, "clean.min_chars must not exceed clean.max_chars");
        check(unit(self.clean.min_alpha_ratio), "clean.min_alpha_ratio must be in [0, 1]");
        check(unit(self.clean.repetitive_max_share), "clean.repetitive_max_share must be in [0, 1]");
        check((8..=30).contains(&self.segment.hash_bits), "segment.hash_bits must be in 8..=30");
        check(self.segment.learning_rate > 0.0 && self.segment.lambda >= 0.0, "segment.learning_rate must be positive and segment.lambda non-negative");
        check(self.readability.alpha >= 0.0 && self.readability.alpha.is_finite(), "readability.alpha must be a non-negative number");
        check(self.readability.w_d >= 0.0 && self.readability.w_d.is_finite(), "readability.w_d must be a non-negative number");
        check(self.readability.top_k >= 1, "readability.top_k must be at least 1");
        for (name, h) in [("labeler.hyper", &self.labeler.hyper), ("semisup.hyper", &self.semisup.hyper)] {
            check(h.dim >= 1 && (8..=28).contains(&h.hash_bits) && (1..=2).contains(&h.ngram), &format!("{name}: dim >= 1, hash_bits in 8..=28, ngram 1 or 2"));
            check(h.learning_rate > 0.0, &format!("{name}.learning_rate must be positive"));
        }
        check(self.labeler.kind == ServiceKind::Builtin || !self.labeler_endpoint().is_empty(), "labeler.endpoint is required for the remote labeler");
        check(self.filter.keep_fraction > 0.0 && self.filter.keep_fraction <= 1.0, "filter.keep_fraction must be in (0, 1]");
        check(unit(self.filter.threshold), "filter.threshold must be in [0, 1]");
        let a = &self.annotation;
        check(a.dialogues_per_hit >= 1 && a.workers_per_hit >= 1, "annotation.dialogues_per_hit and workers_per_hit must be at least 1");
        check(a.quorum >= 1 && a.quorum <= a.workers_per_hit, "annotation.quorum must be in 1..=workers_per_hit");
        check(unit(a.crowd.accuracy) && unit(a.crowd.custom_rate), "annotation.crowd rates must be in [0, 1]");
        check(!a.simulate || a.crowd.workers >= a.workers_per_hit, "annotation.crowd.workers must cover workers_per_hit");
        check(self.embedding.dim >= 1 && self.embedding.tile_rows >= 1 && self.embedding.block_rows >= 1, "embedding.dim, tile_rows and block_rows must be positive");
        check(self.embedding.kind == ServiceKind::Builtin || !self.embedder_endpoint().is_empty(), "embedding.endpoint is required for the remote embedder");
        let s = &self.semisup;
        check((-1.0..=1.0).contains(&s.tau_similar) && (-1.0..=1.0).contains(&s.tau_self), "semisup tau values must be in [-1, 1]");
        check(s.fractions.iter().all(|f| unit(*f)) && (s.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9, "semisup.fractions must be in [0, 1] and sum to 1");
        check(self.analytics.max_depth >= 2, "analytics.max_depth must be at least 2");
        check(self.remote.concurrency >= 1 && self.remote.timeout_ms >= 1, "remote.concurrency and remote.timeout_ms must be positive");
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Validation(errs.join("; ")))
        }
    }
}
