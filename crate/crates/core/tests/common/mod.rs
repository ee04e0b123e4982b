#![allow(dead_code)]

use std::path::{Path, PathBuf};

use subtalk::annotation::{build_hits, Hit, HitConfig, QuizQuestion};
use subtalk::labeling::{HighConfidenceItem, Suggestion};
use subtalk::pipeline::{Pipeline, PipelineConfig};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

/// The bundled mini-corpus config with its work directory moved to `work`.
pub fn mini_config(work: &Path, extra: &[&str]) -> PipelineConfig {
    let mut overrides = vec![format!("paths.work={}", work.display())];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    PipelineConfig::load(&repo_root().join("subtalk.toml"), &overrides).unwrap()
}

/// Runs every stage over the mini-corpus into `work`.
pub fn run_mini(work: &Path) -> Pipeline {
    let mut p = Pipeline::open(mini_config(work, &[])).unwrap();
    p.run_all(false).unwrap();
    p
}

/// Serves `router` on an ephemeral port from a background runtime.
pub fn spawn_router(router: axum::Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

/// `n_hits` HITs of 15 dialogue items and 5 quizzes each.
pub fn sample_hits(n_hits: usize, workers: usize) -> Vec<Hit> {
    let cands: Vec<HighConfidenceItem> = (0..15 * n_hits)
        .map(|i| HighConfidenceItem {
            item_id: format!("d{i:04}#0"),
            dialogue_id: format!("d{i:04}"),
            turn_index: 0,
            turns: vec![format!("I lost my keys again, turn {i}.")],
            label: "Sad".into(),
            confidence: 0.95,
            suggestions: vec![
                Suggestion { label: "Sad".into(), confidence: 0.95 },
                Suggestion { label: "Angry".into(), confidence: 0.03 },
                Suggestion { label: "Afraid".into(), confidence: 0.01 },
            ],
        })
        .collect();
    let quizzes: Vec<QuizQuestion> = (0..8)
        .map(|i| QuizQuestion {
            quiz_id: format!("q{i}"),
            situation: "I finally got the job!".into(),
            gold: "Joyful".into(),
            suggestions: vec!["Joyful".into(), "Sad".into(), "Angry".into()],
        })
        .collect();
    build_hits(&cands, &[], &quizzes, &HitConfig { workers_per_hit: workers, ..Default::default() }).unwrap().hits
}
