use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::ServiceKind;
use super::{Pipeline, PipelineError, Stage};
use crate::analytics::{export_flow, flow_paths, label_distribution, transition_matrix, FlowFormat, LabeledDialogue};
use crate::annotation::simulate::{lexicon_truth, run_crowd, Lexicon};
use crate::annotation::{
    aggregate_majority, build_hits, grade_workers, harvest_new_labels, kappa_from_records, AnnotationStore, HitItem, QuizQuestion,
};
use crate::corpus::{parse_subtitles, segment_sentences, AbbreviationList, DocMetadata, ParseOptions, SentenceRecord, SubtitleDocument, SubtitleFormat};
use crate::dialogue::{clean_dialogues, split_dialogues, Dialogue, Turn};
use crate::embedding::{embed_dialogue, embed_dialogues, expand_by_similarity, BuiltinEmbedder, Embedder, EmbeddingSet, LabeledSet, RemoteEmbedder, SearchOptions};
use crate::labeling::{
    filter_emotional, label_dialogues, prediction_records, select_high_confidence, train_classifier, ContextWindow, HighConfidenceItem, Labeler,
    NGramSoftmaxModel, Prediction, RemoteLabeler, TrainingExample,
};
use crate::readability::{build_vocabulary, dialogue_readability, rank_candidates, ranked_rows, readability, Candidate as ReadCandidate, FrequencyVocabulary, ReadabilityParams};
use crate::segment::{
    boundary_instances, labeled_features, merge_sentences, segment_turns, train_segmenter, BoundaryInstance, BoundaryLabel, BoundaryRecord, FeatureConfig,
    LinearSegmenter, RuleLemmatizer,
};
use crate::semisup::{evaluate, run_iterations, self_label, Candidate as SelfCandidate, IterationPlan, IterationReport, ItemSource, LabeledItem, SemiSupData, StageKind, StagePlan};

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Runtime(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(PipelineError::runtime)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(PipelineError::runtime)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))
}

/// Per-document facts kept after ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSummary {
    pub doc_id: String,
    pub genre: Option<String>,
    /// Known or derived duration.
    pub duration_ms: Option<u64>,
    pub language: String,
    pub blocks: usize,
    pub sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLine {
    pub doc_id: String,
    pub text: String,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
}

/// One dialogue of the final labeled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub dialogue_id: String,
    pub turns: Vec<String>,
    pub labels: Vec<String>,
    pub confidences: Vec<f64>,
}

impl CorpusLine {
    pub fn labeled(&self) -> LabeledDialogue {
        LabeledDialogue::new(self.dialogue_id.clone(), self.labels.iter().cloned())
    }
}

#[derive(Debug, Clone, Deserialize)]
struct SeedExample {
    text: String,
    label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DialoguePredictions {
    dialogue_id: String,
    distributions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParseFailure {
    doc_id: String,
    line: usize,
    message: String,
}

/// Size statistics for one corpus snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub name: String,
    pub dialogues: usize,
    pub turns: usize,
    pub tokens: usize,
}

impl CorpusStats {
    pub fn of(name: &str, dialogues: &[Dialogue]) -> Self {
        Self {
            name: name.to_string(),
            dialogues: dialogues.len(),
            turns: dialogues.iter().map(|d| d.turns.len()).sum(),
            tokens: dialogues.iter().map(Dialogue::token_count).sum(),
        }
    }

    fn ratio(a: usize, b: usize) -> f64 {
        if b == 0 {
            0.0
        } else {
            a as f64 / b as f64
        }
    }

    pub fn turns_per_dialogue(&self) -> f64 {
        Self::ratio(self.turns, self.dialogues)
    }

    pub fn tokens_per_dialogue(&self) -> f64 {
        Self::ratio(self.tokens, self.dialogues)
    }

    pub fn tokens_per_turn(&self) -> f64 {
        Self::ratio(self.tokens, self.turns)
    }

    /// Rows as in the usual dataset statistics table, one column per snapshot.
    pub fn render(cols: &[CorpusStats]) -> String {
        let mut s = format!("{:<32}", "");
        for c in cols {
            write!(s, "{:>14}", c.name).unwrap();
        }
        s.push('\n');
        let rows: [(&str, fn(&CorpusStats) -> String); 6] = [
            ("Total no. of dialogues", |c| c.dialogues.to_string()),
            ("Total no. of turns", |c| c.turns.to_string()),
            ("Total no. of tokens", |c| c.tokens.to_string()),
            ("Avg. no. of turns per dialogue", |c| format!("{:.2}", c.turns_per_dialogue())),
            ("Avg. no. of tokens per dialogue", |c| format!("{:.2}", c.tokens_per_dialogue())),
            ("Avg. no. of tokens per turn", |c| format!("{:.2}", c.tokens_per_turn())),
        ];
        for (label, f) in rows {
            write!(s, "{label:<32}").unwrap();
            for c in cols {
                write!(s, "{:>14}", f(c)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

type Inputs = (Vec<(PathBuf, Option<Stage>)>, Vec<PathBuf>);

impl Pipeline {
    fn art(&self, stage: Stage, name: &str) -> PathBuf {
        self.stage_dir(stage).join(name)
    }

    fn store_dir(&self) -> PathBuf {
        self.art(Stage::ServeAnnotation, "store")
    }

    fn corpus_subtitles(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let dir = &self.config().paths.corpus;
        let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::Validation(format!("corpus directory {}: {e}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()).and_then(SubtitleFormat::from_extension).is_some())
            .collect();
        files.sort();
        Ok(files)
    }

    fn plan_stages(&self) -> Vec<StageKind> {
        vec![StageKind::Base, StageKind::Similar, StageKind::SelfLabeled, StageKind::SimilarToSelf]
    }

    fn model_path(&self, i: usize, kind: StageKind) -> PathBuf {
        let kind = serde_json::to_value(kind).unwrap();
        self.art(Stage::Train, &format!("stage-{}-{}.bin", i + 1, kind.as_str().unwrap()))
    }

    /// Required inputs with the stage producing each, and optional ones.
    pub(super) fn inputs(&self, stage: Stage) -> Result<Inputs, PipelineError> {
        let p = &self.config().paths;
        let req = |s: Stage, name: &str| (self.art(s, name), Some(s));
        Ok(match stage {
            Stage::Ingest => {
                let files = self.corpus_subtitles()?;
                if files.is_empty() {
                    return Err(PipelineError::Validation(format!("no .srt or .xml files in {}", p.corpus.display())));
                }
                (files.into_iter().map(|f| (f, None)).collect(), vec![self.corpus_file(&p.metadata)])
            }
            Stage::SegmentTurns => (
                vec![req(Stage::Ingest, "documents.jsonl"), req(Stage::Ingest, "sentences.jsonl")],
                vec![self.corpus_file(&p.boundaries)],
            ),
            Stage::BuildDialogues => (vec![req(Stage::SegmentTurns, "turns.jsonl")], vec![]),
            Stage::Clean => (vec![req(Stage::BuildDialogues, "raw.jsonl")], vec![]),
            Stage::ScoreReadability => (vec![req(Stage::Clean, "dialogues.jsonl")], vec![]),
            Stage::Label => {
                let mut r = vec![req(Stage::Clean, "dialogues.jsonl")];
                if self.config().labeler.kind == ServiceKind::Builtin {
                    r.push((self.corpus_file(&p.weak_seed), None));
                }
                (r, vec![])
            }
            Stage::FilterEmotional => (
                vec![req(Stage::Clean, "dialogues.jsonl"), req(Stage::Label, "predictions.jsonl"), req(Stage::ScoreReadability, "vocab.tsv")],
                vec![],
            ),
            Stage::ServeAnnotation => {
                let mut r = vec![req(Stage::FilterEmotional, "candidates.jsonl"), req(Stage::FilterEmotional, "overflow.jsonl"), (self.corpus_file(&p.quiz_bank), None)];
                if self.config().annotation.simulate {
                    r.push((self.corpus_file(&p.lexicon), None));
                }
                (r, vec![])
            }
            Stage::Aggregate | Stage::Kappa => {
                let s = self.store_dir();
                (vec![(s.join("hits.json"), Some(Stage::ServeAnnotation)), (s.join("records.jsonl"), Some(Stage::ServeAnnotation))], vec![])
            }
            Stage::Embed => (vec![req(Stage::Clean, "dialogues.jsonl"), req(Stage::Aggregate, "labels.jsonl")], vec![]),
            Stage::ExpandSimilar => (
                vec![req(Stage::Embed, "pool.emb"), req(Stage::Embed, "pool.emb.ids"), req(Stage::Embed, "crowd.emb"), req(Stage::Embed, "crowd.emb.ids"), req(Stage::Embed, "crowd.labels")],
                vec![],
            ),
            Stage::Train => (vec![req(Stage::Clean, "dialogues.jsonl"), req(Stage::Aggregate, "labels.jsonl")], vec![]),
            Stage::SelfLabel => (vec![req(Stage::Train, "final.bin"), req(Stage::FilterEmotional, "emotional.jsonl")], vec![]),
            Stage::Evaluate => {
                let mut r = vec![req(Stage::Train, "split.json"), req(Stage::Aggregate, "labels.jsonl")];
                for (i, k) in self.plan_stages().into_iter().enumerate() {
                    r.push((self.model_path(i, k), Some(Stage::Train)));
                }
                (r, vec![])
            }
            Stage::Analyze | Stage::ExportFlows => (vec![req(Stage::SelfLabel, "corpus.jsonl")], vec![]),
            Stage::Stats => (
                vec![req(Stage::BuildDialogues, "raw.jsonl")],
                vec![self.art(Stage::Clean, "dialogues.jsonl"), self.art(Stage::FilterEmotional, "emotional.jsonl")],
            ),
        })
    }

    /// The config slice a stage depends on, hashed into its manifest entry.
    pub(super) fn stage_config(&self, stage: Stage) -> Value {
        let c = self.config();
        let tax: Vec<&str> = self.taxonomy().names();
        match stage {
            Stage::Ingest => json!(c.ingest),
            Stage::SegmentTurns => json!(c.segment),
            Stage::BuildDialogues => json!(c.dialogues),
            Stage::Clean => json!(c.clean),
            Stage::ScoreReadability => json!(c.readability),
            Stage::Label => json!({ "labeler": c.labeler, "endpoint": c.labeler_endpoint(), "taxonomy": tax }),
            Stage::FilterEmotional => json!({ "filter": c.filter, "readability": c.readability, "taxonomy": tax }),
            Stage::ServeAnnotation => json!({ "annotation": c.annotation, "taxonomy": tax }),
            Stage::Aggregate | Stage::Kappa => json!({ "annotation": c.annotation, "taxonomy": tax }),
            Stage::Embed => json!({ "embedding": c.embedding, "endpoint": c.embedder_endpoint() }),
            Stage::ExpandSimilar => json!({ "tau": c.semisup.tau_similar, "embedding": c.embedding }),
            Stage::Train => json!({ "semisup": c.semisup, "embedding": c.embedding, "taxonomy": tax }),
            Stage::SelfLabel => json!({ "history": c.semisup.hyper.history, "per_class": c.semisup.per_class }),
            Stage::Evaluate => json!({ "history": c.semisup.hyper.history, "taxonomy": tax }),
            Stage::Analyze => json!({ "taxonomy": tax }),
            Stage::ExportFlows => json!({ "analytics": c.analytics, "taxonomy": tax }),
            Stage::Stats => json!(null),
        }
    }

    pub(super) fn execute(&mut self, stage: Stage) -> Result<Vec<PathBuf>, PipelineError> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::SegmentTurns => self.segment(),
            Stage::BuildDialogues => self.build_dialogues(),
            Stage::Clean => self.clean(),
            Stage::ScoreReadability => self.score_readability(),
            Stage::Label => self.label(),
            Stage::FilterEmotional => self.filter(),
            Stage::ServeAnnotation => self.annotate(),
            Stage::Aggregate => self.aggregate(),
            Stage::Kappa => self.kappa(),
            Stage::Embed => self.embed(),
            Stage::ExpandSimilar => self.expand(),
            Stage::Train => self.train(),
            Stage::SelfLabel => self.self_label(),
            Stage::Evaluate => self.evaluate(),
            Stage::Analyze => self.analyze(),
            Stage::ExportFlows => self.export_flows(),
            Stage::Stats => self.stats(),
        }
    }

    fn load_dialogues(&self, stage: Stage, name: &str) -> Result<Vec<Dialogue>, PipelineError> {
        read_jsonl(&self.art(stage, name))
    }

    fn embedder(&self) -> Box<dyn Embedder> {
        let e = &self.config().embedding;
        match e.kind {
            ServiceKind::Builtin => Box::new(BuiltinEmbedder { dim: e.dim, seed: e.seed }),
            ServiceKind::Remote => Box::new(RemoteEmbedder::new(&self.config().embedder_endpoint(), e.dim, self.config().remote.clone())),
        }
    }

    fn search_options(&self) -> SearchOptions {
        SearchOptions { tile_rows: self.config().embedding.tile_rows, block_rows: self.config().embedding.block_rows }
    }

    fn ingest(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let cfg = &self.config().ingest;
        let meta_path = self.corpus_file(&self.config().paths.metadata);
        let metadata: HashMap<String, DocMetadata> =
            if meta_path.exists() { crate::corpus::load_metadata(&meta_path).map_err(|e| PipelineError::Validation(e.to_string()))? } else { HashMap::new() };
        let guard = AbbreviationList::default();
        let files = self.corpus_subtitles()?;
        type Parsed = Result<(DocSummary, Vec<SentenceRecord>, Vec<ParseFailure>, bool), ParseFailure>;
        let parsed: Vec<Parsed> = files
            .par_iter()
            .map(|path| {
                let doc_id = path.file_stem().unwrap().to_string_lossy().to_string();
                let format = SubtitleFormat::from_extension(path.extension().unwrap().to_str().unwrap()).unwrap();
                let fail = |message: String| ParseFailure { doc_id: doc_id.clone(), line: 0, message };
                let raw = std::fs::read(path).map_err(|e| fail(e.to_string()))?;
                let mut opts = ParseOptions::new(doc_id.clone());
                opts.language = cfg.language.clone();
                opts.lossy_utf8 = cfg.lossy_utf8;
                let parsed = parse_subtitles(&raw, format, &opts).map_err(|e| fail(e.to_string()))?;
                let mut doc = parsed.document;
                if let Some(m) = metadata.get(&doc_id) {
                    doc.apply_metadata(m);
                }
                let sentences = segment_sentences(&doc, &guard);
                let summary = DocSummary {
                    doc_id: doc_id.clone(),
                    genre: doc.genre.clone(),
                    duration_ms: doc.effective_duration_ms(),
                    language: doc.language.clone(),
                    blocks: doc.blocks.len(),
                    sentences: sentences.len(),
                };
                let records = sentences.iter().map(|s| SentenceRecord::new(&doc_id, s)).collect();
                let issues = parsed.report.issues.into_iter().map(|i| ParseFailure { doc_id: doc_id.clone(), line: i.line, message: i.message }).collect();
                Ok((summary, records, issues, parsed.report.lossy_decoded))
            })
            .collect();

        let docs_path = self.art(Stage::Ingest, "documents.jsonl");
        let sents_path = self.art(Stage::Ingest, "sentences.jsonl");
        let mut docs = Vec::new();
        let mut sentences = Vec::new();
        let mut issues = Vec::new();
        let mut failed = Vec::new();
        let mut lossy = Vec::new();
        for p in parsed {
            match p {
                Ok((d, s, i, l)) => {
                    if l {
                        lossy.push(d.doc_id.clone());
                    }
                    docs.push(d);
                    sentences.extend(s);
                    issues.extend(i);
                }
                Err(f) => failed.push(f),
            }
        }
        for f in &failed {
            log::warn!("skipping {}: {}", f.doc_id, f.message);
        }
        write_jsonl(&docs_path, &docs)?;
        write_jsonl(&sents_path, &sentences)?;
        let report_path = self.art(Stage::Ingest, "report.json");
        write_json(
            &report_path,
            &json!({
                "documents": docs.len(),
                "blocks": docs.iter().map(|d| d.blocks).sum::<usize>(),
                "sentences": sentences.len(),
                "skipped_blocks": issues,
                "failed_documents": failed,
                "lossy_decoded": lossy,
            }),
        )?;
        Ok(vec![docs_path, sents_path, report_path])
    }

    fn segment(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let c = &self.config().segment;
        let fcfg = FeatureConfig { hash_bits: c.hash_bits, max_crosses: c.max_crosses };
        let lemm = RuleLemmatizer::default();
        let docs: Vec<DocSummary> = read_jsonl(&self.art(Stage::Ingest, "documents.jsonl"))?;
        let records: Vec<SentenceRecord> = read_jsonl(&self.art(Stage::Ingest, "sentences.jsonl"))?;
        let mut by_doc: HashMap<&str, Vec<crate::corpus::Sentence>> = HashMap::new();
        for r in &records {
            by_doc.entry(r.doc_id.as_str()).or_default().push(r.to_sentence());
        }

        let boundaries = self.corpus_file(&self.config().paths.boundaries);
        let mut outputs = Vec::new();
        let mut report = serde_json::Map::new();
        let model: Option<LinearSegmenter> = if boundaries.exists() {
            let recs: Vec<BoundaryRecord> = read_jsonl(&boundaries)?;
            let instances: Vec<BoundaryInstance> = recs.iter().map(BoundaryInstance::from).collect();
            let data = labeled_features(&instances, &lemm, &fcfg).map_err(PipelineError::runtime)?;
            let (model, tr) = train_segmenter(&data, &c.hyper(), None).map_err(PipelineError::runtime)?;
            let path = self.art(Stage::SegmentTurns, "segmenter.bin");
            model.save(&path)?;
            outputs.push(path);
            report.insert("model".into(), json!("trained"));
            report.insert("training_instances".into(), json!(instances.len()));
            report.insert("train_accuracy".into(), json!(tr.train_accuracy));
            report.insert("epoch_objective".into(), json!(tr.epoch_objective));
            Some(model)
        } else {
            log::warn!("no {}; falling back to one turn per subtitle block", boundaries.display());
            report.insert("model".into(), json!("block-boundaries"));
            None
        };

        let empty = Vec::new();
        let per_doc: Vec<Vec<Turn>> = docs
            .iter()
            .map(|d| {
                let sentences = by_doc.get(d.doc_id.as_str()).unwrap_or(&empty);
                let doc = SubtitleDocument { doc_id: d.doc_id.clone(), genre: d.genre.clone(), duration_ms: d.duration_ms, blocks: Vec::new(), language: d.language.clone() };
                match &model {
                    Some(m) => segment_turns(&doc, sentences, m, &lemm, &fcfg).map_err(PipelineError::runtime),
                    None => {
                        let decisions: Vec<BoundaryLabel> = boundary_instances(&doc, sentences)
                            .iter()
                            .map(|b| if b.same_block { BoundaryLabel::SameTurn } else { BoundaryLabel::NewTurn })
                            .collect();
                        Ok(merge_sentences(&doc.doc_id, sentences, &decisions))
                    }
                }
            })
            .collect::<Result<_, _>>()?;
        let lines: Vec<TurnLine> = per_doc
            .iter()
            .flatten()
            .map(|t| TurnLine { doc_id: t.doc_id.clone(), text: t.text.clone(), start_ms: t.start_ms, end_ms: t.end_ms })
            .collect();
        let turns_path = self.art(Stage::SegmentTurns, "turns.jsonl");
        write_jsonl(&turns_path, &lines)?;
        report.insert("sentences".into(), json!(records.len()));
        report.insert("turns".into(), json!(lines.len()));
        let report_path = self.art(Stage::SegmentTurns, "report.json");
        write_json(&report_path, &Value::Object(report))?;
        outputs.extend([turns_path, report_path]);
        Ok(outputs)
    }

    fn build_dialogues(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let lines: Vec<TurnLine> = read_jsonl(&self.art(Stage::SegmentTurns, "turns.jsonl"))?;
        let turns: Vec<Turn> = lines.into_iter().map(|l| Turn::new(l.text, l.start_ms, l.end_ms, &l.doc_id)).collect();
        let dialogues = split_dialogues(&turns, self.config().dialogues.gap_ms);
        let path = self.art(Stage::BuildDialogues, "raw.jsonl");
        write_jsonl(&path, &dialogues)?;
        Ok(vec![path])
    }

    fn clean(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let raw = self.load_dialogues(Stage::BuildDialogues, "raw.jsonl")?;
        let (kept, report) = clean_dialogues(&raw, &self.config().clean);
        let path = self.art(Stage::Clean, "dialogues.jsonl");
        write_jsonl(&path, &kept)?;
        let rp = self.art(Stage::Clean, "report.json");
        write_json(&rp, &report)?;
        Ok(vec![path, rp])
    }

    fn readability_params(&self) -> ReadabilityParams {
        let r = &self.config().readability;
        ReadabilityParams { alpha: r.alpha, w_d: r.w_d, mode: r.mode }
    }

    fn score_readability(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let dialogues = self.load_dialogues(Stage::Clean, "dialogues.jsonl")?;
        let vocab = build_vocabulary(&dialogues);
        let vp = self.art(Stage::ScoreReadability, "vocab.tsv");
        vocab.save(&vp)?;
        let params = self.readability_params();
        let rows: Vec<Value> = dialogues
            .par_iter()
            .filter_map(|d| dialogue_readability(d, &vocab, &params).ok().map(|s| json!({ "dialogue_id": d.dialogue_id, "f": s.f, "d": s.d, "score": s.score })))
            .collect();
        let sp = self.art(Stage::ScoreReadability, "scores.jsonl");
        write_jsonl(&sp, &rows)?;
        Ok(vec![vp, sp])
    }

    fn label(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let c = &self.config().labeler;
        let dialogues = self.load_dialogues(Stage::Clean, "dialogues.jsonl")?;
        let mut outputs = Vec::new();
        let labeler: Box<dyn Labeler> = match c.kind {
            ServiceKind::Builtin => {
                let seed: Vec<SeedExample> = read_jsonl(&self.corpus_file(&self.config().paths.weak_seed))?;
                let examples: Vec<TrainingExample> =
                    seed.into_iter().map(|s| TrainingExample { window: ContextWindow::single(s.text), label: s.label }).collect();
                let (model, report) = train_classifier(&examples, self.taxonomy(), &c.hyper, None).map_err(PipelineError::runtime)?;
                let mp = self.art(Stage::Label, "weak_labeler.bin");
                model.save(&mp)?;
                let rp = self.art(Stage::Label, "weak_labeler.json");
                write_json(&rp, &report)?;
                outputs.extend([mp, rp]);
                Box::new(model)
            }
            ServiceKind::Remote => Box::new(RemoteLabeler::new(&self.config().labeler_endpoint(), self.taxonomy().clone(), self.config().remote.clone())),
        };
        let predictions = label_dialogues(&dialogues, labeler.as_ref(), c.history).map_err(PipelineError::runtime)?;
        let rows: Vec<DialoguePredictions> = dialogues
            .iter()
            .zip(&predictions)
            .map(|(d, p)| DialoguePredictions { dialogue_id: d.dialogue_id.clone(), distributions: p.iter().map(|x| x.distribution.clone()).collect() })
            .collect();
        let pp = self.art(Stage::Label, "predictions.jsonl");
        write_jsonl(&pp, &rows)?;
        let dp = self.art(Stage::Label, "turn_labels.jsonl");
        write_jsonl(&dp, &prediction_records(&dialogues, &predictions, self.taxonomy()))?;
        outputs.extend([pp, dp]);
        Ok(outputs)
    }

    fn filter(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let c = &self.config().filter;
        let tax = self.taxonomy();
        let dialogues = self.load_dialogues(Stage::Clean, "dialogues.jsonl")?;
        let rows: Vec<DialoguePredictions> = read_jsonl(&self.art(Stage::Label, "predictions.jsonl"))?;
        let by_id: HashMap<String, Vec<Vec<f64>>> = rows.into_iter().map(|r| (r.dialogue_id, r.distributions)).collect();
        let predictions: Vec<Vec<Prediction>> = dialogues
            .iter()
            .map(|d| {
                let dist = by_id.get(&d.dialogue_id).ok_or_else(|| PipelineError::Runtime(format!("no predictions for {}; rerun label", d.dialogue_id)))?;
                dist.iter().map(|x| Prediction::from_distribution(x.clone()).map_err(PipelineError::runtime)).collect()
            })
            .collect::<Result<_, _>>()?;
        let n = if c.keep > 0 { c.keep } else { ((c.keep_fraction * dialogues.len() as f64).round() as usize).max(1) };
        let kept = filter_emotional(&dialogues, &predictions, tax, n, c.strategy);
        let index: HashMap<&str, usize> = dialogues.iter().enumerate().map(|(i, d)| (d.dialogue_id.as_str(), i)).collect();
        let emotional: Vec<Dialogue> = kept.iter().map(|(d, _)| d.clone()).collect();
        let emo_preds: Vec<Vec<Prediction>> = emotional.iter().map(|d| predictions[index[d.dialogue_id.as_str()]].clone()).collect();
        let ep = self.art(Stage::FilterEmotional, "emotional.jsonl");
        write_jsonl(&ep, &emotional)?;
        let conf_rows: Vec<Value> = kept.iter().map(|(d, c)| json!({ "dialogue_id": d.dialogue_id, "confidence": c })).collect();
        let cp = self.art(Stage::FilterEmotional, "confidence.jsonl");
        write_jsonl(&cp, &conf_rows)?;

        let items = select_high_confidence(&emotional, &emo_preds, tax, c.threshold);
        let vocab = FrequencyVocabulary::load(&self.art(Stage::ScoreReadability, "vocab.tsv")).map_err(PipelineError::runtime)?;
        let params = self.readability_params();
        let scored: Vec<ReadCandidate> = items
            .par_iter()
            .filter_map(|it| readability(&it.turns, &vocab, &params).ok().map(|s| ReadCandidate { id: it.item_id.clone(), class: it.label.clone(), score: s.score }))
            .collect();
        let ranking = rank_candidates(&scored, self.config().readability.top_k);
        let item_by_id: HashMap<&str, &HighConfidenceItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
        // Interleave classes by rank so every HIT mixes labels.
        let depth = ranking.values().map(Vec::len).max().unwrap_or(0);
        let mut candidates: Vec<&HighConfidenceItem> = Vec::new();
        for r in 0..depth {
            for list in ranking.values() {
                if let Some(c) = list.get(r) {
                    candidates.push(item_by_id[c.id.as_str()]);
                }
            }
        }
        let chosen: HashSet<&str> = candidates.iter().map(|c| c.item_id.as_str()).collect();
        let mut rest: Vec<&ReadCandidate> = scored.iter().filter(|c| !chosen.contains(c.id.as_str())).collect();
        rest.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        let overflow: Vec<&HighConfidenceItem> = rest.iter().map(|c| item_by_id[c.id.as_str()]).collect();

        let kp = self.art(Stage::FilterEmotional, "candidates.jsonl");
        write_jsonl(&kp, candidates.iter().copied())?;
        let op = self.art(Stage::FilterEmotional, "overflow.jsonl");
        write_jsonl(&op, overflow.iter().copied())?;
        let rp = self.art(Stage::FilterEmotional, "ranking.tsv");
        let mut tsv = String::from("class\trank\tid\tscore\n");
        for r in ranked_rows(&ranking) {
            writeln!(tsv, "{}\t{}\t{}\t{:.9}", r.class, r.rank, r.id, r.score).unwrap();
        }
        std::fs::write(&rp, tsv)?;
        log::info!("{} emotional dialogues, {} confident turns, {} candidates", emotional.len(), items.len(), candidates.len());
        Ok(vec![ep, cp, kp, op, rp])
    }

    fn annotate(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let a = &self.config().annotation;
        let dir = self.store_dir();
        let candidates: Vec<HighConfidenceItem> = read_jsonl(&self.art(Stage::FilterEmotional, "candidates.jsonl"))?;
        let overflow: Vec<HighConfidenceItem> = read_jsonl(&self.art(Stage::FilterEmotional, "overflow.jsonl"))?;
        let quizzes: Vec<QuizQuestion> = read_jsonl(&self.corpus_file(&self.config().paths.quiz_bank))?;
        for q in &quizzes {
            if self.taxonomy().id(&q.gold).is_none() {
                return Err(PipelineError::Validation(format!("quiz {} has gold label {} outside the taxonomy", q.quiz_id, q.gold)));
            }
        }
        let batch = build_hits(&candidates, &overflow, &quizzes, &a.hit_config()).map_err(|e| PipelineError::Validation(e.to_string()))?;
        let bp = self.art(Stage::ServeAnnotation, "batch.json");
        write_json(&bp, &json!({ "hits": batch.hits.len(), "candidates": candidates.len(), "rejected": batch.rejected }))?;

        let store = if a.simulate || !dir.join("hits.json").exists() {
            if dir.exists() {
                std::fs::remove_dir_all(&dir)?;
            }
            AnnotationStore::create(&dir, batch.hits, self.taxonomy().clone()).map_err(PipelineError::runtime)?
        } else {
            log::info!("resuming annotation store {}", dir.display());
            AnnotationStore::open(&dir, self.taxonomy().clone()).map_err(PipelineError::runtime)?
        };
        let mut outputs = vec![bp];
        if a.simulate {
            let lexicon = Lexicon::load(&self.corpus_file(&self.config().paths.lexicon))?;
            store.set_sync(false)?;
            let truth = lexicon_truth(&lexicon);
            let run = run_crowd(&store, &truth, &a.crowd).map_err(PipelineError::runtime)?;
            store.set_sync(true)?;
            let cp = self.art(Stage::ServeAnnotation, "crowd.json");
            write_json(&cp, &run)?;
            outputs.push(cp);
        } else {
            let store = Arc::new(store);
            let static_dir = Some(a.static_dir.clone()).filter(|p| !p.as_os_str().is_empty());
            let addr = a.addr.clone();
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                log::info!("annotation API on http://{}", listener.local_addr()?);
                crate::annotation::server::serve(listener, store, static_dir).await
            })?;
        }
        outputs.extend(["hits.json", "assignments.jsonl", "records.jsonl"].map(|f| dir.join(f)));
        Ok(outputs)
    }

    fn open_store(&self) -> Result<AnnotationStore, PipelineError> {
        AnnotationStore::open(&self.store_dir(), self.taxonomy().clone()).map_err(PipelineError::runtime)
    }

    fn aggregate(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let tax = self.taxonomy();
        let a = &self.config().annotation;
        let store = self.open_store()?;
        let records = store.records();
        let grades = grade_workers(&records, store.hits(), tax);
        let (results, summary) = aggregate_majority(&records, &grades, tax, &a.aggregate_config()).map_err(PipelineError::runtime)?;

        let turns_of: HashMap<&str, &Vec<String>> = store
            .hits()
            .iter()
            .flat_map(|h| &h.items)
            .filter_map(|i| match i {
                HitItem::Dialogue { item_id, turns, .. } => Some((item_id.as_str(), turns)),
                HitItem::Quiz { .. } => None,
            })
            .collect();
        let labeled: Vec<LabeledItem> = results
            .iter()
            .filter_map(|r| {
                let label = r.label.as_ref().filter(|l| tax.id(l).is_some())?;
                Some(LabeledItem {
                    id: r.item_id.clone(),
                    dialogue_id: r.dialogue_id.clone()?,
                    turns: turns_of.get(r.item_id.as_str())?.to_vec(),
                    label: label.clone(),
                    source: ItemSource::Crowd,
                })
            })
            .collect();
        let new_labels = harvest_new_labels(&records, tax);

        let mut hit_minutes: BTreeMap<(&str, &str), (u64, u64)> = BTreeMap::new();
        for r in &records {
            let e = hit_minutes.entry((r.worker_id.as_str(), r.hit_id.as_str())).or_insert((u64::MAX, 0));
            e.0 = e.0.min(r.timestamp_ms);
            e.1 = e.1.max(r.timestamp_ms);
        }
        let avg_minutes = if hit_minutes.is_empty() { 0.0 } else { hit_minutes.values().map(|(a, b)| (b - a) as f64 / 60_000.0).sum::<f64>() / hit_minutes.len() as f64 };
        let pass_rate = if grades.is_empty() { 0.0 } else { 100.0 * grades.iter().filter(|g| g.passed).count() as f64 / grades.len() as f64 };

        let dir = self.stage_dir(Stage::Aggregate);
        let paths: Vec<PathBuf> = ["results.jsonl", "labels.jsonl", "grades.jsonl", "new_labels.json", "summary.json", "summary.txt"].iter().map(|f| dir.join(f)).collect();
        write_jsonl(&paths[0], &results)?;
        write_jsonl(&paths[1], &labeled)?;
        write_jsonl(&paths[2], &grades)?;
        write_json(&paths[3], &new_labels)?;
        write_json(
            &paths[4],
            &json!({
                "hits": store.hits().len(),
                "records": records.len(),
                "summary": summary,
                "training_items": labeled.len(),
                "quiz_pass_rate": pass_rate,
                "avg_minutes_per_hit": avg_minutes,
            }),
        )?;
        let mut txt = String::new();
        writeln!(txt, "{:<52}{:>16}", "Total no. of dialogues", summary.items).unwrap();
        writeln!(txt, "{:<52}{:>16}", "No. of dialogues labeled with majority vote", format!("{} ({:.2}%)", summary.resolved, summary.coverage)).unwrap();
        writeln!(txt, "{:<52}{:>16}", "Avg. time taken per HIT", format!("{avg_minutes:.2} min.")).unwrap();
        writeln!(txt, "{:<52}{:>16}", "% of times workers got 3/5 quiz questions correct", format!("{pass_rate:.2}%")).unwrap();
        writeln!(txt, "{:<52}{:>16}", "New labels proposed", new_labels.len()).unwrap();
        std::fs::write(&paths[5], txt)?;
        Ok(paths)
    }

    fn kappa(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let store = self.open_store()?;
        let k = kappa_from_records(&store.records(), self.taxonomy());
        let p = self.art(Stage::Kappa, "kappa.json");
        write_json(&p, &k)?;
        Ok(vec![p])
    }

    fn crowd_items(&self) -> Result<Vec<LabeledItem>, PipelineError> {
        read_jsonl(&self.art(Stage::Aggregate, "labels.jsonl"))
    }

    fn embed(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let embedder = self.embedder();
        let crowd = self.crowd_items()?;
        let crowd_dialogues: HashSet<&str> = crowd.iter().map(|i| i.dialogue_id.as_str()).collect();
        let pool: Vec<Dialogue> =
            self.load_dialogues(Stage::Clean, "dialogues.jsonl")?.into_iter().filter(|d| !crowd_dialogues.contains(d.dialogue_id.as_str())).collect();
        let pool_set = embed_dialogues(&pool, embedder.as_ref()).map_err(PipelineError::runtime)?;
        let texts: Vec<String> = crowd.iter().flat_map(|i| i.turns.iter().cloned()).collect();
        let mut vecs = embedder.embed(&texts).map_err(PipelineError::runtime)?.into_iter();
        let mut crowd_set = EmbeddingSet::new(embedder.dim());
        for it in &crowd {
            let turns: Vec<Vec<f32>> = vecs.by_ref().take(it.turns.len()).collect();
            let v: Vec<f32> = embed_dialogue(&turns).map_err(PipelineError::runtime)?.into_iter().map(|x| x as f32).collect();
            crowd_set.push(&it.id, &v).map_err(PipelineError::runtime)?;
        }
        let pp = self.art(Stage::Embed, "pool.emb");
        let cp = self.art(Stage::Embed, "crowd.emb");
        pool_set.save(&pp)?;
        crowd_set.save(&cp)?;
        let lp = self.art(Stage::Embed, "crowd.labels");
        std::fs::write(&lp, crowd.iter().map(|i| format!("{}\n", i.label)).collect::<String>())?;
        Ok(vec![EmbeddingSet::ids_path(&pp), pp, EmbeddingSet::ids_path(&cp), cp, lp])
    }

    fn expand(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let pool = EmbeddingSet::load(&self.art(Stage::Embed, "pool.emb")).map_err(PipelineError::runtime)?;
        let crowd = EmbeddingSet::load(&self.art(Stage::Embed, "crowd.emb")).map_err(PipelineError::runtime)?;
        let labels: Vec<String> = std::fs::read_to_string(self.art(Stage::Embed, "crowd.labels"))?.lines().map(str::to_string).collect();
        let labeled = LabeledSet { set: crowd, labels };
        let matches = expand_by_similarity(&labeled, &pool, None, self.config().semisup.tau_similar, &self.search_options()).map_err(PipelineError::runtime)?;
        let p = self.art(Stage::ExpandSimilar, "similar.jsonl");
        write_jsonl(&p, &matches)?;
        Ok(vec![p])
    }

    fn iteration_plan(&self) -> IterationPlan {
        let s = &self.config().semisup;
        let stages = self
            .plan_stages()
            .into_iter()
            .map(|kind| match kind {
                StageKind::Similar => StagePlan { kind, tau: s.tau_similar, per_class: 0 },
                StageKind::SelfLabeled => StagePlan { kind, tau: 0.0, per_class: s.per_class },
                StageKind::SimilarToSelf => StagePlan { kind, tau: s.tau_self, per_class: 0 },
                StageKind::Base => StagePlan { kind, tau: 0.0, per_class: 0 },
            })
            .collect();
        IterationPlan { stages, fractions: s.fractions, balanced: s.balanced, seed: s.seed, hyper: s.hyper, search: self.search_options() }
    }

    fn train(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let crowd = self.crowd_items()?;
        let dialogues = self.load_dialogues(Stage::Clean, "dialogues.jsonl")?;
        let embedder = self.embedder();
        let plan = self.iteration_plan();
        let data = SemiSupData { taxonomy: self.taxonomy(), labeled: &crowd, unlabeled: &dialogues };
        let (models, report) = run_iterations(&plan, &data, embedder.as_ref()).map_err(PipelineError::runtime)?;
        let mut outputs = Vec::new();
        for (i, (m, st)) in models.iter().zip(&report.stages).enumerate() {
            let p = self.model_path(i, st.kind);
            m.save(&p)?;
            outputs.push(p);
        }
        let fp = self.art(Stage::Train, "final.bin");
        models.last().ok_or_else(|| PipelineError::Runtime("no stages ran".into()))?.save(&fp)?;
        let sp = self.art(Stage::Train, "split.json");
        write_json(&sp, &report.split)?;
        let rp = self.art(Stage::Train, "report.json");
        write_json(&rp, &report)?;
        let tp = self.art(Stage::Train, "report.txt");
        std::fs::write(&tp, report.render())?;
        outputs.extend([fp, sp, rp, tp]);
        Ok(outputs)
    }

    fn self_label(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let model = NGramSoftmaxModel::load(&self.art(Stage::Train, "final.bin")).map_err(PipelineError::runtime)?;
        model.check_taxonomy(self.taxonomy()).map_err(PipelineError::runtime)?;
        let emotional = self.load_dialogues(Stage::FilterEmotional, "emotional.jsonl")?;
        let history = self.config().semisup.hyper.history;
        let predictions = label_dialogues(&emotional, &model, history).map_err(PipelineError::runtime)?;
        let tax = self.taxonomy();
        let lines: Vec<CorpusLine> = emotional
            .iter()
            .zip(&predictions)
            .map(|(d, ps)| CorpusLine {
                dialogue_id: d.dialogue_id.clone(),
                turns: d.turns.iter().map(|t| t.text.clone()).collect(),
                labels: ps.iter().map(|p| tax.name(p.top).to_string()).collect(),
                confidences: ps.iter().map(|p| p.confidence).collect(),
            })
            .collect();
        let cp = self.art(Stage::SelfLabel, "corpus.jsonl");
        write_jsonl(&cp, &lines)?;

        let mut candidates = Vec::new();
        for (d, ps) in emotional.iter().zip(&predictions) {
            for (i, p) in ps.iter().enumerate() {
                let item = LabeledItem {
                    id: crate::labeling::item_id(&d.dialogue_id, i),
                    dialogue_id: d.dialogue_id.clone(),
                    turns: d.turns[..=i].iter().map(|t| t.text.clone()).collect(),
                    label: String::new(),
                    source: ItemSource::SelfLabeled,
                };
                candidates.push(SelfCandidate { item, prediction: p.clone() });
            }
        }
        let top: Vec<Value> = self_label(&candidates, tax, self.config().semisup.per_class)
            .into_iter()
            .map(|(item, conf)| json!({ "id": item.id, "label": item.label, "confidence": conf }))
            .collect();
        let tp = self.art(Stage::SelfLabel, "top_per_class.jsonl");
        write_jsonl(&tp, &top)?;
        Ok(vec![cp, tp])
    }

    fn evaluate(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let tax = self.taxonomy();
        let split: crate::semisup::DatasetSplit = read_json(&self.art(Stage::Train, "split.json"))?;
        let crowd = self.crowd_items()?;
        let test_ids: HashSet<&str> = split.test.iter().map(String::as_str).collect();
        let test: Vec<LabeledItem> = crowd.iter().filter(|i| test_ids.contains(i.id.as_str())).cloned().collect();
        let train_ids: HashSet<String> = split.train.iter().chain(&split.validation).cloned().collect();
        let trained: IterationReport = read_json(&self.art(Stage::Train, "report.json"))?;
        let history = self.config().semisup.hyper.history;
        let mut report = IterationReport { split: split.clone(), stages: Vec::new() };
        for (i, kind) in self.plan_stages().into_iter().enumerate() {
            let model = NGramSoftmaxModel::load(&self.model_path(i, kind)).map_err(PipelineError::runtime)?;
            let metrics = evaluate(&model, tax, &test, &train_ids, history).map_err(PipelineError::runtime)?;
            let mut row = trained.stages.get(i).cloned().ok_or_else(|| PipelineError::Runtime("train report is missing stages; rerun train".into()))?;
            row.metrics = metrics;
            report.stages.push(row);
        }
        let jp = self.art(Stage::Evaluate, "report.json");
        write_json(&jp, &report)?;
        let tp = self.art(Stage::Evaluate, "report.txt");
        std::fs::write(&tp, report.render())?;
        Ok(vec![jp, tp])
    }

    fn labeled_corpus(&self) -> Result<Vec<LabeledDialogue>, PipelineError> {
        let lines: Vec<CorpusLine> = read_jsonl(&self.art(Stage::SelfLabel, "corpus.jsonl"))?;
        Ok(lines.iter().map(CorpusLine::labeled).collect())
    }

    fn analyze(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let corpus = self.labeled_corpus()?;
        let dist = label_distribution(&corpus, self.taxonomy()).map_err(PipelineError::runtime)?;
        let m = transition_matrix(&corpus, self.taxonomy()).map_err(PipelineError::runtime)?;
        let dp = self.art(Stage::Analyze, "distribution.tsv");
        std::fs::write(&dp, dist.to_tsv())?;
        let tp = self.art(Stage::Analyze, "transitions.tsv");
        std::fs::write(&tp, m.to_tsv())?;
        let sp = self.art(Stage::Analyze, "summary.json");
        write_json(&sp, &json!({ "dialogues": corpus.len(), "turns": dist.total, "adjacent_pairs": m.total() }))?;
        Ok(vec![dp, tp, sp])
    }

    fn export_flows(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let a = &self.config().analytics;
        let corpus = self.labeled_corpus()?;
        let mut outputs = Vec::new();
        for root in &a.roots {
            let g = flow_paths(&corpus, self.taxonomy(), root, a.max_depth).map_err(|e| PipelineError::Validation(e.to_string()))?;
            let g = if a.top_n > 0 { g.truncate_layers(a.top_n) } else { g };
            let stem = root.to_lowercase();
            for (ext, fmt) in [("sankey.tsv", FlowFormat::SankeyRecords), ("dot", FlowFormat::Dot)] {
                let p = self.art(Stage::ExportFlows, &format!("{stem}.{ext}"));
                std::fs::write(&p, export_flow(&g, fmt))?;
                outputs.push(p);
            }
        }
        Ok(outputs)
    }

    fn stats(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let mut cols = vec![CorpusStats::of("raw", &self.load_dialogues(Stage::BuildDialogues, "raw.jsonl")?)];
        for (stage, file, name) in [(Stage::Clean, "dialogues.jsonl", "cleaned"), (Stage::FilterEmotional, "emotional.jsonl", "emotional")] {
            if self.art(stage, file).exists() {
                cols.push(CorpusStats::of(name, &self.load_dialogues(stage, file)?));
            }
        }
        let tp = self.art(Stage::Stats, "stats.txt");
        std::fs::write(&tp, CorpusStats::render(&cols))?;
        let jp = self.art(Stage::Stats, "stats.json");
        write_json(&jp, &cols)?;
        Ok(vec![tp, jp])
    }
}
