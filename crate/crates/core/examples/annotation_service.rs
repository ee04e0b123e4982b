//! Serve HITs over HTTP and answer one as a worker would.

use std::sync::Arc;

use serde_json::{json, Value};
use subtalk::annotation::{build_hits, server, AnnotationStore, HitConfig, HitItem, QuizQuestion};
use subtalk::labeling::{HighConfidenceItem, LabelTaxonomy, Suggestion};

fn item(n: usize, text: &str, label: &str) -> HighConfidenceItem {
    HighConfidenceItem {
        item_id: format!("demo/{n:04}#0"),
        dialogue_id: format!("demo/{n:04}"),
        turn_index: 0,
        turns: vec![text.into()],
        label: label.into(),
        confidence: 0.95,
        suggestions: ["Sad", "Joyful", "Afraid"].iter().map(|l| Suggestion { label: l.to_string(), confidence: 0.3 }).collect(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let candidates = vec![item(1, "My cat ran away.", "Sad"), item(2, "We got the house!", "Joyful"), item(3, "Someone is downstairs.", "Afraid")];
    let quizzes: Vec<QuizQuestion> = (0..5)
        .map(|i| QuizQuestion { quiz_id: format!("q{i}"), situation: "I passed my exam!".into(), gold: "Joyful".into(), suggestions: vec!["Joyful".into(), "Sad".into(), "Afraid".into()] })
        .collect();
    let cfg = HitConfig { dialogues_per_hit: 3, workers_per_hit: 2, ..HitConfig::default() };
    let batch = build_hits(&candidates, &[], &quizzes, &cfg)?;

    let dir = tempfile::tempdir()?;
    let store = Arc::new(AnnotationStore::create(dir.path(), batch.hits, LabelTaxonomy::default())?);
    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    rt.spawn(server::serve(listener, store, None));

    let hit: Value = ureq::get(format!("{base}/hits/next?worker=w1")).call()?.body_mut().read_json()?;
    println!("w1 claimed {} with {} items", hit["hit_id"], hit["items"].as_array().unwrap().len());
    let items: Vec<HitItem> = serde_json::from_value(hit["items"].clone())?;
    for it in &items {
        let label = match it {
            HitItem::Quiz { .. } => "Joyful".to_string(),
            HitItem::Dialogue { suggestions, .. } => suggestions[0].label.clone(),
        };
        let body = json!({ "worker_id": "w1", "hit_id": hit["hit_id"], "item_id": it.item_id(), "choice": { "label": label }, "chose_from_top3": true });
        let reply: Value = ureq::post(format!("{base}/annotations")).send_json(&body)?.body_mut().read_json()?;
        println!("  {} -> {}", it.item_id(), reply);
    }
    // A second answer to the same item is a conflict.
    let dup = json!({ "worker_id": "w1", "hit_id": hit["hit_id"], "item_id": items[0].item_id(), "choice": { "label": "Sad" } });
    match ureq::post(format!("{base}/annotations")).send_json(&dup) {
        Err(ureq::Error::StatusCode(code)) => println!("duplicate answer rejected with {code}"),
        other => println!("unexpected: {other:?}"),
    }
    let progress: Value = ureq::get(format!("{base}/progress")).call()?.body_mut().read_json()?;
    println!("progress: {progress}");
    Ok(())
}
