//! The staged command graph over a work directory.
//!
//! Every stage reads artifacts from earlier stages (or the corpus
//! directory), writes its own under `work/<stage>/`, and records input,
//! config and output hashes in `work/manifest.json`. A stage whose inputs,
//! config and outputs still match its manifest entry is skipped.

mod config;
mod manifest;
mod stages;
pub mod synth;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{
    AnalyticsSection, AnnotationSection, DialogueSection, EmbeddingSection, FilterSection, IngestSection, LabelerSection, Paths,
    PipelineConfig, ReadabilitySection, SegmentSection, SemiSection, ServiceKind,
};
pub use manifest::{hash_file, sha256_hex, Manifest, StageEntry, WorkLock, LOCK_FILE, MANIFEST_FILE};
pub use stages::{CorpusLine, CorpusStats, DocSummary, TurnLine};

use crate::labeling::LabelTaxonomy;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} needs {missing}; run `{run_first}` first")]
    Prerequisite { stage: &'static str, missing: PathBuf, run_first: &'static str },
    #[error("work directory is locked by {holder:?} ({path}); remove the lock file if that process is gone")]
    Locked { path: PathBuf, holder: String },
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit status: 2 validation, 3 missing prerequisite, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Prerequisite { .. } => 3,
            _ => 4,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    SegmentTurns,
    BuildDialogues,
    Clean,
    ScoreReadability,
    Label,
    FilterEmotional,
    ServeAnnotation,
    Aggregate,
    Kappa,
    Embed,
    ExpandSimilar,
    Train,
    SelfLabel,
    Evaluate,
    Analyze,
    ExportFlows,
    Stats,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 18] = [
        Stage::Ingest,
        Stage::SegmentTurns,
        Stage::BuildDialogues,
        Stage::Clean,
        Stage::ScoreReadability,
        Stage::Label,
        Stage::FilterEmotional,
        Stage::ServeAnnotation,
        Stage::Aggregate,
        Stage::Kappa,
        Stage::Embed,
        Stage::ExpandSimilar,
        Stage::Train,
        Stage::SelfLabel,
        Stage::Evaluate,
        Stage::Analyze,
        Stage::ExportFlows,
        Stage::Stats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::SegmentTurns => "segment-turns",
            Stage::BuildDialogues => "build-dialogues",
            Stage::Clean => "clean",
            Stage::ScoreReadability => "score-readability",
            Stage::Label => "label",
            Stage::FilterEmotional => "filter-emotional",
            Stage::ServeAnnotation => "serve-annotation",
            Stage::Aggregate => "aggregate",
            Stage::Kappa => "kappa",
            Stage::Embed => "embed",
            Stage::ExpandSimilar => "expand-similar",
            Stage::Train => "train",
            Stage::SelfLabel => "self-label",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
            Stage::ExportFlows => "export-flows",
            Stage::Stats => "stats",
        }
    }

    /// Directory under the work dir holding this stage's outputs.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::SegmentTurns => "segment",
            Stage::BuildDialogues => "dialogues",
            Stage::ScoreReadability => "readability",
            Stage::FilterEmotional => "filter",
            Stage::ServeAnnotation => "annotation",
            Stage::ExpandSimilar => "expand",
            Stage::ExportFlows => "flows",
            other => other.name(),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s}"))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub skipped: bool,
    pub elapsed_ms: u64,
    pub outputs: Vec<String>,
}

/// A locked work directory plus the loaded config and taxonomy.
pub struct Pipeline {
    cfg: PipelineConfig,
    taxonomy: LabelTaxonomy,
    manifest: Manifest,
    _lock: WorkLock,
}

fn now_ms() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl Pipeline {
    pub fn open(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let taxonomy = if cfg.paths.labels.as_os_str().is_empty() {
            LabelTaxonomy::default()
        } else {
            LabelTaxonomy::load(&cfg.paths.labels).map_err(|e| PipelineError::Validation(format!("labels: {e}")))?
        };
        let lock = WorkLock::acquire(&cfg.paths.work)?;
        let manifest = Manifest::load(&cfg.paths.work)?;
        Ok(Self { cfg, taxonomy, manifest, _lock: lock })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn taxonomy(&self) -> &LabelTaxonomy {
        &self.taxonomy
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn work(&self) -> &Path {
        &self.cfg.paths.work
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.work().join(stage.dir())
    }

    pub fn corpus_file(&self, name: &str) -> PathBuf {
        self.cfg.paths.corpus.join(name)
    }

    /// Runs one stage unless its manifest entry is still current (or `force`).
    pub fn run(&mut self, stage: Stage, force: bool) -> Result<StageOutcome, PipelineError> {
        let (required, optional) = self.inputs(stage)?;
        for (path, producer) in &required {
            if !path.exists() {
                return Err(PipelineError::Prerequisite { stage: stage.name(), missing: path.clone(), run_first: producer.map_or("the corpus generator", |p| p.name()) });
            }
        }
        let mut files: Vec<PathBuf> = required.into_iter().map(|(p, _)| p).collect();
        files.extend(optional.into_iter().filter(|p| p.exists()));
        let root = self.cfg.paths.work.clone();
        let inputs = manifest::hash_files(&root, &files)?;
        let config_hash = sha256_hex(&serde_json::to_vec(&self.stage_config(stage)).expect("config serializes"));

        if !force && !stage.reruns_always(&self.cfg) {
            if let Some(prev) = self.manifest.stages.get(stage.name()) {
                if prev.inputs == inputs && prev.config_hash == config_hash && self.outputs_intact(prev) {
                    log::info!("{stage}: up to date");
                    return Ok(StageOutcome { stage: stage.name(), skipped: true, elapsed_ms: 0, outputs: prev.outputs.keys().cloned().collect() });
                }
            }
        }

        log::info!("{stage}: running");
        let start = Instant::now();
        std::fs::create_dir_all(self.stage_dir(stage))?;
        let written = self.execute(stage)?;
        let outputs = manifest::hash_files(&root, &written)?;
        let elapsed_ms = start.elapsed().as_millis() as u64;
        let entry = StageEntry { config_hash, inputs, outputs: outputs.clone(), elapsed_ms, finished_at_ms: now_ms() };
        self.manifest.stages.insert(stage.name().to_string(), entry);
        self.manifest.save(&root)?;
        log::info!("{stage}: done in {elapsed_ms} ms");
        Ok(StageOutcome { stage: stage.name(), skipped: false, elapsed_ms, outputs: outputs.into_keys().collect() })
    }

    /// Every stage in dependency order.
    pub fn run_all(&mut self, force: bool) -> Result<Vec<StageOutcome>, PipelineError> {
        Stage::ALL.into_iter().map(|s| self.run(s, force)).collect()
    }

    fn outputs_intact(&self, entry: &StageEntry) -> bool {
        entry.outputs.iter().all(|(rel, hash)| {
            let p = self.work().join(rel);
            hash_file(&p).is_ok_and(|h| &h == hash)
        })
    }
}

impl Stage {
    /// An interactive annotation server has no fixed outputs to compare.
    fn reruns_always(self, cfg: &PipelineConfig) -> bool {
        self == Stage::ServeAnnotation && !cfg.annotation.simulate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
        let mut sorted = Stage::ALL;
        sorted.sort();
        assert_eq!(sorted, Stage::ALL);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Validation("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Prerequisite { stage: "evaluate", missing: "m".into(), run_first: "train" }.exit_code(), 3);
        assert_eq!(PipelineError::Runtime("x".into()).exit_code(), 4);
    }
}
