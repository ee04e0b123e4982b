//! Score dialogues for readability against corpus word frequencies and
//! keep the top candidates per label.

use subtalk::dialogue::{Dialogue, Turn};
use subtalk::readability::{build_vocabulary, dialogue_readability, rank_candidates, ranked_rows, Candidate, ReadabilityParams};

fn dialogue(id: &str, texts: &[&str]) -> Dialogue {
    let turns = texts.iter().map(|t| Turn::new(*t, None, None, "demo")).collect();
    Dialogue { dialogue_id: id.into(), doc_id: "demo".into(), turns, provenance: Default::default() }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = vec![
        (dialogue("d1", &["I am so happy for you.", "Thank you, it was a good day."]), "Joyful"),
        (dialogue("d2", &["Notwithstanding the circumstances, reconciliation seems implausible.", "Indubitably."]), "Sad"),
        (dialogue("d3", &["I lost my dog.", "I am so sorry."]), "Sad"),
        (dialogue("d4", &["We won!", "That is so good!"]), "Joyful"),
        (dialogue("d5", &["Why is the door open?", "I do not know."]), "Afraid"),
    ];
    let dialogues: Vec<Dialogue> = corpus.iter().map(|(d, _)| d.clone()).collect();
    let vocab = build_vocabulary(&dialogues);
    let params = ReadabilityParams::default();

    let mut candidates = Vec::new();
    for (d, class) in &corpus {
        let s = dialogue_readability(d, &vocab, &params)?;
        println!("{}  f={:.5} d={:.2} score={:.4}", d.dialogue_id, s.f, s.d, s.score);
        candidates.push(Candidate { id: d.dialogue_id.clone(), class: class.to_string(), score: s.score });
    }
    for row in ranked_rows(&rank_candidates(&candidates, 1)) {
        println!("top of {}: {} ({:.4})", row.class, row.id, row.score);
    }
    Ok(())
}
