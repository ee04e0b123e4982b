//! Label counts, turn-to-turn transitions, and flows rooted at an emotion.

use subtalk::analytics::{export_flow, flow_paths, label_distribution, transition_matrix, FlowFormat, LabeledDialogue};
use subtalk::labeling::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = [
        ("d1", vec!["Sad", "Sympathizing", "Sad", "Consoling"]),
        ("d2", vec!["Sad", "Questioning", "Anxious"]),
        ("d3", vec!["Joyful", "Acknowledging"]),
        ("d4", vec!["Sad", "Sympathizing", "Grateful", "Wishing", "Joyful", "Acknowledging"]),
    ]
    .map(|(id, labels)| LabeledDialogue::new(id, labels.into_iter().map(String::from)));
    let tax = LabelTaxonomy::default();

    let dist = label_distribution(&corpus, &tax)?;
    for row in dist.rows.iter().filter(|r| r.count > 0) {
        println!("{:<14} {:?} {}", row.label, row.kind, row.count);
    }
    let m = transition_matrix(&corpus, &tax)?;
    println!("{} transitions, Sad -> Sympathizing = {}", m.total(), m.count("Sad", "Sympathizing"));

    let g = flow_paths(&corpus, &tax, "Sad", 4)?;
    print!("{}", export_flow(&g, FlowFormat::SankeyRecords));
    print!("{}", export_flow(&g.truncate_layers(2), FlowFormat::Dot));
    Ok(())
}
