mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use subtalk::embedding::{Embedder, RemoteEmbedder};
use subtalk::labeling::{ClassifyRequest, ContextWindow, LabelError, LabelTaxonomy, Labeler, RemoteLabeler};
use subtalk::pipeline::{Pipeline, Stage};
use subtalk::remote::{RemoteError, RetryPolicy};

fn fast_policy(retries: u32) -> RetryPolicy {
    RetryPolicy { retries, initial_backoff_ms: 1, timeout_ms: 5_000, concurrency: 4 }
}

/// Puts 0.9 on the label named by the newest turn's first word, spreading
/// the rest over the other labels.
fn answer_for(req: &ClassifyRequest) -> Value {
    let tax = LabelTaxonomy::default();
    let first = req.turns[0].text.split_whitespace().next().unwrap_or("");
    let top = tax.id(first).unwrap_or(tax.id("Neutral").unwrap());
    let rest = 0.1 / (tax.len() - 1) as f64;
    let probs: Vec<f64> = (0..tax.len()).map(|i| if i == top { 0.9 } else { rest }).collect();
    json!({ "labels": tax.names(), "probabilities": probs })
}

#[derive(Default)]
struct Mock {
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    requests: Mutex<Vec<ClassifyRequest>>,
}

fn classify_server(fail_first: usize, fail_status: StatusCode) -> (String, Arc<Mock>) {
    let mock = Arc::new(Mock::default());
    let m = mock.clone();
    let router = Router::new().route(
        "/classify",
        post(move |Json(req): Json<ClassifyRequest>| {
            let m = m.clone();
            async move {
                let n = m.calls.fetch_add(1, Ordering::SeqCst);
                let now = m.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                m.max_in_flight.fetch_max(now, Ordering::SeqCst);
                tokio::time::sleep(std::time::Duration::from_millis(5)).await;
                m.in_flight.fetch_sub(1, Ordering::SeqCst);
                if n < fail_first {
                    return (fail_status, Json(json!({ "error": "try later" })));
                }
                let body = answer_for(&req);
                m.requests.lock().unwrap().push(req);
                (StatusCode::OK, Json(body))
            }
        }),
    );
    (common::spawn_router(router), mock)
}

fn fixed_server(body: &'static str) -> String {
    common::spawn_router(Router::new().route("/classify", post(move || async move { body })))
}

fn window() -> ContextWindow {
    ContextWindow::new("Joyful news, she got the job.", vec!["Where were you?".into(), "Out, with friends.".into()])
}

#[test]
fn request_is_newest_first_with_half_decay_weights() {
    let (url, mock) = classify_server(0, StatusCode::OK);
    let labeler = RemoteLabeler::new(&url, LabelTaxonomy::default(), fast_policy(0));
    let p = labeler.predict(&window()).unwrap();
    assert_eq!(LabelTaxonomy::default().name(p.top), "Joyful");
    assert!((p.confidence - 0.9).abs() < 1e-12);

    let req = mock.requests.lock().unwrap()[0].clone();
    let texts: Vec<&str> = req.turns.iter().map(|t| t.text.as_str()).collect();
    assert_eq!(texts, ["Joyful news, she got the job.", "Out, with friends.", "Where were you?"]);
    let weights: Vec<f64> = req.turns.iter().map(|t| t.weight).collect();
    for (w, want) in weights.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
        assert!((w - want).abs() < 1e-12);
    }
}

#[test]
fn transient_failures_are_retried() {
    let (url, mock) = classify_server(2, StatusCode::SERVICE_UNAVAILABLE);
    let labeler = RemoteLabeler::new(&url, LabelTaxonomy::default(), fast_policy(3));
    assert!(labeler.predict(&window()).is_ok());
    assert_eq!(mock.calls.load(Ordering::SeqCst), 3);

    let (url, mock) = classify_server(1, StatusCode::TOO_MANY_REQUESTS);
    let labeler = RemoteLabeler::new(&url, LabelTaxonomy::default(), fast_policy(1));
    assert!(labeler.predict(&window()).is_ok());
    assert_eq!(mock.calls.load(Ordering::SeqCst), 2);
}

#[test]
fn retries_are_bounded() {
    let (url, mock) = classify_server(usize::MAX, StatusCode::INTERNAL_SERVER_ERROR);
    let labeler = RemoteLabeler::new(&url, LabelTaxonomy::default(), fast_policy(2));
    match labeler.predict(&window()) {
        Err(LabelError::Remote(RemoteError::Unavailable { attempts, .. })) => assert_eq!(attempts, 3),
        other => panic!("expected Unavailable, got {other:?}"),
    }
    assert_eq!(mock.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, mock) = classify_server(usize::MAX, StatusCode::BAD_REQUEST);
    let labeler = RemoteLabeler::new(&url, LabelTaxonomy::default(), fast_policy(3));
    match labeler.predict(&window()) {
        Err(LabelError::Remote(RemoteError::Rejected { status, .. })) => assert_eq!(status, 400),
        other => panic!("expected Rejected, got {other:?}"),
    }
    assert_eq!(mock.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_responses_are_protocol_errors() {
    let bodies = [
        r#"not json"#,
        r#"{"labels": ["Sad", "Joyful"], "probabilities": [1.0]}"#,
        r#"{"labels": ["Melancholic"], "probabilities": [1.0]}"#,
        r#"{"labels": ["Sad", "Joyful"], "probabilities": [0.7, 0.7]}"#,
        r#"{"labels": ["Sad", "Sad"], "probabilities": [0.5, 0.5]}"#,
        r#"{"labels": ["Sad"], "probabilities": [-1.0]}"#,
    ];
    for body in bodies {
        let labeler = RemoteLabeler::new(&fixed_server(body), LabelTaxonomy::default(), fast_policy(0));
        let r = labeler.predict(&window());
        assert!(matches!(r, Err(LabelError::Remote(RemoteError::Protocol(_)))), "{body}: {r:?}");
    }
    // A partial distribution that still sums to one is fine.
    let labeler = RemoteLabeler::new(&fixed_server(r#"{"labels": ["Sad", "Joyful"], "probabilities": [0.25, 0.75]}"#), LabelTaxonomy::default(), fast_policy(0));
    let p = labeler.predict(&window()).unwrap();
    assert_eq!(LabelTaxonomy::default().name(p.top), "Joyful");
}

#[test]
fn batch_calls_keep_order_and_respect_concurrency() {
    let (url, mock) = classify_server(0, StatusCode::OK);
    let labeler = RemoteLabeler::new(&url, LabelTaxonomy::default(), RetryPolicy { concurrency: 3, ..fast_policy(0) });
    let tax = LabelTaxonomy::default();
    let names: Vec<String> = tax.names().into_iter().map(String::from).collect();
    let windows: Vec<ContextWindow> = names.iter().map(|n| ContextWindow::single(format!("{n} it is."))).collect();
    let preds = labeler.predict_many(&windows).unwrap();
    let got: Vec<&str> = preds.iter().map(|p| tax.name(p.top)).collect();
    assert_eq!(got, names.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(mock.max_in_flight.load(Ordering::SeqCst) <= 3);
    assert_eq!(mock.calls.load(Ordering::SeqCst), names.len());
}

#[test]
fn embedder_checks_shape() {
    let url = common::spawn_router(Router::new().route(
        "/embed",
        post(|Json(v): Json<Value>| async move {
            let n = v["texts"].as_array().unwrap().len();
            // One vector short whenever more than two texts are sent.
            let m = if n > 2 { n - 1 } else { n };
            Json(json!({ "vectors": vec![vec![0.5f32; 4]; m] }))
        }),
    ));
    let e = RemoteEmbedder::new(&url, 4, fast_policy(0));
    assert_eq!(e.embed(&["a".into(), "b".into()]).unwrap().len(), 2);
    assert!(e.embed(&["a".into(), "b".into(), "c".into()]).is_err());
    let wrong_dim = RemoteEmbedder::new(&url, 8, fast_policy(0));
    assert!(wrong_dim.embed(&["a".into()]).is_err());
}

#[test]
fn label_stage_runs_against_a_remote_labeler() {
    let (url, mock) = classify_server(1, StatusCode::SERVICE_UNAVAILABLE);
    let work = tempfile::tempdir().unwrap();
    let cfg = common::mini_config(
        work.path(),
        &["labeler.kind=\"remote\"", &format!("labeler.endpoint=\"{url}\""), "labeler.history=2", "remote.initial_backoff_ms=1"],
    );
    let mut p = Pipeline::open(cfg).unwrap();
    for stage in [Stage::Ingest, Stage::SegmentTurns, Stage::BuildDialogues, Stage::Clean, Stage::Label] {
        p.run(stage, false).unwrap();
    }
    let turns: usize = std::fs::read_to_string(p.stage_dir(Stage::Clean).join("dialogues.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["turns"].as_array().unwrap().len())
        .sum();
    // One failed attempt plus one request per cleaned turn.
    assert_eq!(mock.calls.load(Ordering::SeqCst), turns + 1);
    let reqs = mock.requests.lock().unwrap();
    assert!(reqs.iter().all(|r| r.turns.len() <= 3));
    assert!(reqs.iter().any(|r| r.turns.len() == 3));
}
