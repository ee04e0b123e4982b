//! Durable annotation state: the fixed HIT list plus two append-only logs
//! (assignments and records). All writes go through one mutex and are
//! synced before the call returns; reopening replays the logs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::aggregate::{harvest_new_labels, vote_key, AnnotationRecord, Choice, NewLabel};
use super::hits::{Hit, HitItem};
use crate::labeling::{Label, LabelTaxonomy};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown HIT {0}")]
    UnknownHit(String),
    #[error("HIT {hit} has no item {item}")]
    UnknownItem { hit: String, item: String },
    #[error("worker {worker} is not assigned to HIT {hit}")]
    NotAssigned { worker: String, hit: String },
    #[error("worker {worker} already answered item {item}")]
    Duplicate { worker: String, item: String },
    #[error("invalid field {field}: {message}")]
    Validation { field: &'static str, message: String },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Assignment {
    hit_id: String,
    worker_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizFeedback {
    pub correct: bool,
    pub gold: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub record: AnnotationRecord,
    pub quiz: Option<QuizFeedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitProgress {
    pub hit_id: String,
    pub workers_target: usize,
    pub assigned: Vec<String>,
    pub completed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProgress {
    pub worker_id: String,
    pub hit_id: String,
    pub answered: usize,
    pub items: usize,
    pub quiz_answered: usize,
    pub quiz_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub hits: Vec<HitProgress>,
    pub workers: Vec<WorkerProgress>,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsView {
    pub taxonomy: Vec<Label>,
    pub custom: Vec<NewLabel>,
}

struct Inner {
    assignments: HashMap<String, Vec<String>>,
    records: Vec<AnnotationRecord>,
    answered: HashSet<(String, String)>,
    assign_log: File,
    record_log: File,
    sync: bool,
}

pub struct AnnotationStore {
    dir: PathBuf,
    hits: Vec<Hit>,
    index: HashMap<String, usize>,
    taxonomy: LabelTaxonomy,
    inner: Mutex<Inner>,
}

const HITS_FILE: &str = "hits.json";
const ASSIGN_FILE: &str = "assignments.jsonl";
const RECORD_FILE: &str = "records.jsonl";

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn append(file: &mut File, value: &impl Serialize, sync: bool) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(std::io::Error::other)?;
    line.push(b'\n');
    file.write_all(&line)?;
    if sync {
        file.sync_data()?;
    }
    Ok(())
}

fn now_ms() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl AnnotationStore {
    /// Writes `hits` into a fresh store directory.
    pub fn create(dir: &Path, hits: Vec<Hit>, taxonomy: LabelTaxonomy) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(HITS_FILE);
        if path.exists() {
            return Err(StoreError::Validation { field: "dir", message: format!("{} already holds a store", dir.display()) });
        }
        let tmp = dir.join("hits.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&hits).map_err(std::io::Error::other)?)?;
        std::fs::rename(&tmp, &path)?;
        Self::open(dir, taxonomy)
    }

    pub fn open(dir: &Path, taxonomy: LabelTaxonomy) -> Result<Self, StoreError> {
        let path = dir.join(HITS_FILE);
        let hits: Vec<Hit> = serde_json::from_slice(&std::fs::read(&path)?)
            .map_err(|e| StoreError::Corrupt { path: path.clone(), message: e.to_string() })?;
        let index = hits.iter().enumerate().map(|(i, h)| (h.hit_id.clone(), i)).collect();
        let mut assignments: HashMap<String, Vec<String>> = HashMap::new();
        for a in read_jsonl::<Assignment>(&dir.join(ASSIGN_FILE))? {
            assignments.entry(a.hit_id).or_default().push(a.worker_id);
        }
        let records: Vec<AnnotationRecord> = read_jsonl(&dir.join(RECORD_FILE))?;
        let answered = records.iter().map(|r| (r.worker_id.clone(), r.item_id.clone())).collect();
        let open = |name: &str| OpenOptions::new().create(true).append(true).open(dir.join(name));
        let inner = Inner { assignments, records, answered, assign_log: open(ASSIGN_FILE)?, record_log: open(RECORD_FILE)?, sync: true };
        Ok(Self { dir: dir.to_path_buf(), hits, index, taxonomy, inner: Mutex::new(inner) })
    }

    /// With `false`, appends skip the per-write fsync until [`Self::flush`]
    /// or until syncing is turned back on. Meant for batch simulation.
    pub fn set_sync(&self, sync: bool) -> std::io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        inner.sync = sync;
        if sync {
            inner.assign_log.sync_data()?;
            inner.record_log.sync_data()?;
        }
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn taxonomy(&self) -> &LabelTaxonomy {
        &self.taxonomy
    }

    /// HITs including quiz answers.
    pub fn hits(&self) -> &[Hit] {
        &self.hits
    }

    pub fn hit(&self, hit_id: &str) -> Option<&Hit> {
        self.index.get(hit_id).map(|&i| &self.hits[i])
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.inner.lock().unwrap().records.clone()
    }

    fn finished(inner: &Inner, hit: &Hit, worker: &str) -> bool {
        hit.items.iter().all(|i| inner.answered.contains(&(worker.to_string(), i.item_id().to_string())))
    }

    /// Atomically assigns `worker` a HIT: the one they already hold and
    /// have not finished, else the first HIT with a free slot that they
    /// have not worked on. `None` when nothing is left for them.
    pub fn claim_next(&self, worker: &str) -> Result<Option<&Hit>, StoreError> {
        if worker.trim().is_empty() {
            return Err(StoreError::Validation { field: "worker", message: "must not be empty".into() });
        }
        let mut inner = self.inner.lock().unwrap();
        for hit in &self.hits {
            let holds = inner.assignments.get(&hit.hit_id).is_some_and(|w| w.iter().any(|x| x == worker));
            if holds && !Self::finished(&inner, hit, worker) {
                return Ok(Some(hit));
            }
        }
        for hit in &self.hits {
            let workers = inner.assignments.get(&hit.hit_id).map(Vec::as_slice).unwrap_or(&[]);
            if workers.len() < hit.workers_target && !workers.iter().any(|x| x == worker) {
                let sync = inner.sync;
                append(&mut inner.assign_log, &Assignment { hit_id: hit.hit_id.clone(), worker_id: worker.to_string() }, sync)?;
                inner.assignments.entry(hit.hit_id.clone()).or_default().push(worker.to_string());
                return Ok(Some(hit));
            }
        }
        Ok(None)
    }

    /// Validates and persists one answer; quiz answers are graded.
    pub fn submit(&self, mut record: AnnotationRecord) -> Result<SubmitOutcome, StoreError> {
        let hit = self.hit(&record.hit_id).ok_or_else(|| StoreError::UnknownHit(record.hit_id.clone()))?;
        let item = hit
            .item(&record.item_id)
            .ok_or_else(|| StoreError::UnknownItem { hit: record.hit_id.clone(), item: record.item_id.clone() })?;
        match &record.choice {
            Choice::Label(l) if self.taxonomy.id(l).is_none() => {
                return Err(StoreError::Validation { field: "choice.label", message: format!("{l:?} is not in the taxonomy") })
            }
            Choice::Custom(t) if t.trim().is_empty() => {
                return Err(StoreError::Validation { field: "choice.custom", message: "must not be empty".into() })
            }
            _ => {}
        }
        match item {
            HitItem::Dialogue { dialogue_id, turn_index, .. } => {
                record.dialogue_id = Some(dialogue_id.clone());
                record.turn_index = Some(*turn_index);
            }
            HitItem::Quiz { .. } => {
                record.dialogue_id = None;
                record.turn_index = None;
            }
        }
        if record.timestamp_ms == 0 {
            record.timestamp_ms = now_ms();
        }
        let quiz = item.gold().map(|gold| QuizFeedback { correct: vote_key(&record.choice, &self.taxonomy) == gold, gold: gold.to_string() });

        let mut inner = self.inner.lock().unwrap();
        let assigned = inner.assignments.get(&record.hit_id).is_some_and(|w| w.contains(&record.worker_id));
        if !assigned {
            return Err(StoreError::NotAssigned { worker: record.worker_id.clone(), hit: record.hit_id.clone() });
        }
        let key = (record.worker_id.clone(), record.item_id.clone());
        if inner.answered.contains(&key) {
            return Err(StoreError::Duplicate { worker: key.0, item: key.1 });
        }
        let sync = inner.sync;
        append(&mut inner.record_log, &record, sync)?;
        inner.answered.insert(key);
        inner.records.push(record.clone());
        Ok(SubmitOutcome { record, quiz })
    }

    pub fn progress(&self) -> Progress {
        let inner = self.inner.lock().unwrap();
        let mut per_worker: BTreeMap<(String, String), (usize, usize, usize)> = BTreeMap::new();
        for r in &inner.records {
            let e = per_worker.entry((r.worker_id.clone(), r.hit_id.clone())).or_default();
            e.0 += 1;
            if let Some(gold) = self.hit(&r.hit_id).and_then(|h| h.item(&r.item_id)).and_then(HitItem::gold) {
                e.1 += 1;
                if vote_key(&r.choice, &self.taxonomy) == gold {
                    e.2 += 1;
                }
            }
        }
        let hits = self
            .hits
            .iter()
            .map(|h| {
                let assigned = inner.assignments.get(&h.hit_id).cloned().unwrap_or_default();
                let completed = assigned.iter().filter(|w| Self::finished(&inner, h, w)).cloned().collect();
                HitProgress { hit_id: h.hit_id.clone(), workers_target: h.workers_target, assigned, completed }
            })
            .collect();
        let workers = per_worker
            .into_iter()
            .map(|((worker_id, hit_id), (answered, quiz_answered, quiz_correct))| {
                let items = self.hit(&hit_id).map(|h| h.items.len()).unwrap_or(0);
                WorkerProgress { worker_id, hit_id, answered, items, quiz_answered, quiz_correct }
            })
            .collect();
        Progress { hits, workers, records: inner.records.len() }
    }

    pub fn labels(&self) -> LabelsView {
        let records = self.records();
        LabelsView { taxonomy: self.taxonomy.labels().to_vec(), custom: harvest_new_labels(&records, &self.taxonomy) }
    }
}
