//! Embed dialogues with the built-in embedder and pull in unlabeled ones
//! that sit close to a labeled dialogue.

use subtalk::embedding::{cosine, embed_dialogue, expand_by_similarity, expand_naive, BuiltinEmbedder, Embedder, EmbeddingSet, LabeledSet, SearchOptions};

fn set(embedder: &BuiltinEmbedder, dialogues: &[(&str, &[&str])]) -> Result<EmbeddingSet, Box<dyn std::error::Error>> {
    let mut out = EmbeddingSet::new(embedder.dim());
    for (id, turns) in dialogues {
        let texts: Vec<String> = turns.iter().map(|t| t.to_string()).collect();
        let v: Vec<f32> = embed_dialogue(&embedder.embed(&texts)?)?.into_iter().map(|x| x as f32).collect();
        out.push(id, &v)?;
    }
    Ok(out)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let embedder = BuiltinEmbedder::default();
    let labeled = set(&embedder, &[("L1", &["I lost my job today.", "I am so sorry to hear that."]), ("L2", &["We won the final!", "Amazing, congratulations!"])])?;
    let unlabeled = set(
        &embedder,
        &[
            ("U1", &["I lost my job today.", "I am sorry to hear that."]),
            ("U2", &["We won the final!", "Congratulations!"]),
            ("U3", &["Where is the bus station?", "Two blocks north."]),
        ],
    )?;
    let labeled = LabeledSet { set: labeled, labels: vec!["Sad".into(), "Joyful".into()] };
    println!("cos(L1, U1) = {:.3}", cosine(labeled.set.row(0), unlabeled.row(0))?);

    for tau in [0.95, 0.8, 0.5] {
        let fast = expand_by_similarity(&labeled, &unlabeled, None, tau, &SearchOptions::default())?;
        assert_eq!(fast, expand_naive(&labeled, &unlabeled, None, tau)?);
        let got: Vec<String> = fast.iter().map(|m| format!("{}<-{} {:.3}", m.unlabeled_id, m.labeled_id, m.cosine)).collect();
        println!("tau {tau}: {got:?}");
    }
    Ok(())
}
