//! Inter-annotator agreement and quiz-gated majority voting.

use subtalk::annotation::{aggregate_majority, fleiss_kappa, AggregateConfig, AnnotationRecord, Choice, QuizGrade};
use subtalk::labeling::LabelTaxonomy;

fn vote(worker: &str, item: &str, label: &str) -> AnnotationRecord {
    AnnotationRecord {
        worker_id: worker.into(),
        hit_id: "hit-00001".into(),
        item_id: item.into(),
        dialogue_id: Some(item.split('#').next().unwrap().into()),
        turn_index: Some(0),
        choice: Choice::Label(label.into()),
        chose_from_top3: true,
        timestamp_ms: 0,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Rows are items, columns categories, cells rater counts.
    let perfect = fleiss_kappa(&[vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3]]);
    let split = fleiss_kappa(&[vec![2, 1, 0], vec![1, 1, 1], vec![0, 2, 1], vec![3, 0, 0]]);
    println!("kappa perfect {:.3}, mixed {:.3}", perfect.kappa, split.kappa);

    let records = vec![
        vote("a", "d1#0", "Sad"), vote("b", "d1#0", "Sad"), vote("c", "d1#0", "Joyful"),
        vote("a", "d2#0", "Sad"), vote("b", "d2#0", "Joyful"), vote("c", "d2#0", "Afraid"),
        vote("a", "d3#0", "Angry"), vote("b", "d3#0", "Angry"), vote("c", "d3#0", "Angry"),
    ];
    let grades: Vec<QuizGrade> = Vec::new();
    let (results, summary) = aggregate_majority(&records, &grades, &LabelTaxonomy::default(), &AggregateConfig::default())?;
    for r in &results {
        println!("{} -> {:?} (agreement {:.2})", r.item_id, r.label, r.agreement);
    }
    println!("{} of {} items resolved ({:.1}%)", summary.resolved, summary.items, summary.coverage);
    Ok(())
}
