//! Label turns through an external classifier speaking the `/classify`
//! protocol. A toy keyword server stands in for the real model.

use axum::{routing::post, Json, Router};
use subtalk::labeling::{label_dialogues, ClassifyRequest, ClassifyResponse, LabelTaxonomy, RemoteLabeler};
use subtalk::dialogue::{Dialogue, Turn};
use subtalk::remote::RetryPolicy;

async fn classify(Json(req): Json<ClassifyRequest>) -> Json<ClassifyResponse> {
    // Turns arrive newest first; only the target turn matters here.
    let text = req.turns.first().map(|t| t.text.to_lowercase()).unwrap_or_default();
    let top = if text.contains("sorry") { "Sympathizing" } else if text.contains('?') { "Questioning" } else { "Neutral" };
    Json(ClassifyResponse { labels: vec![top.into(), "Joyful".into()], probabilities: vec![0.9, 0.1] })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let addr = listener.local_addr()?;
    rt.spawn(async move { axum::serve(listener, Router::new().route("/classify", post(classify))).await });

    let labeler = RemoteLabeler::new(&format!("http://{addr}"), LabelTaxonomy::default(), RetryPolicy::default());
    let turns = ["My grandmother passed away.", "I am so sorry.", "Was it sudden?"].map(|t| Turn::new(t, None, None, "demo"));
    let d = Dialogue { dialogue_id: "demo/0001".into(), doc_id: "demo".into(), turns: turns.to_vec(), provenance: Default::default() };
    let tax = LabelTaxonomy::default();
    for (turn, p) in d.turns.iter().zip(&label_dialogues(&[d.clone()], &labeler, 2)?[0]) {
        println!("{:<30} {} {:.2}", turn.text, tax.name(p.top), p.confidence);
    }
    Ok(())
}
