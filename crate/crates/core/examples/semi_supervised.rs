//! Four-stage training: crowd labels, + similar dialogues, + self-labeled
//! turns, + dialogues similar to those. Labels come from the generator's
//! planted truth so the example needs no crowd.

use subtalk::dialogue::{Dialogue, Turn};
use subtalk::embedding::BuiltinEmbedder;
use subtalk::labeling::{LabelTaxonomy, NGramHyper};
use subtalk::pipeline::synth::{generate_corpus, SynthConfig, TruthDialogue};
use subtalk::semisup::{run_iterations, IterationPlan, ItemSource, LabeledItem, SemiSupData, StageKind, StagePlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    generate_corpus(dir.path(), &SynthConfig { files: 60, noise: false, ..SynthConfig::mini() })?;
    let truth: Vec<TruthDialogue> =
        std::fs::read_to_string(dir.path().join("truth.jsonl"))?.lines().map(serde_json::from_str).collect::<Result<_, _>>()?;

    // First half: every turn labeled. Second half: unlabeled.
    let (labeled_part, unlabeled_part) = truth.split_at(truth.len() / 2);
    let mut labeled = Vec::new();
    for (i, d) in labeled_part.iter().enumerate() {
        for (k, t) in d.turns.iter().enumerate() {
            labeled.push(LabeledItem {
                id: format!("t{i}#{k}"),
                dialogue_id: format!("t{i}"),
                turns: d.turns[..=k].iter().map(|t| t.text.clone()).collect(),
                label: t.label.clone().unwrap(),
                source: ItemSource::Crowd,
            });
        }
    }
    let unlabeled: Vec<Dialogue> = unlabeled_part
        .iter()
        .enumerate()
        .map(|(i, d)| Dialogue {
            dialogue_id: format!("u{i}"),
            doc_id: d.doc_id.clone(),
            turns: d.turns.iter().map(|t| Turn::new(t.text.clone(), None, None, &d.doc_id)).collect(),
            provenance: Default::default(),
        })
        .collect();

    // The bag-of-words embedder links dialogues that share filler clauses, so
    // the similarity thresholds sit high.
    let plan = IterationPlan {
        stages: vec![
            StagePlan { kind: StageKind::Base, tau: 0.0, per_class: 0 },
            StagePlan { kind: StageKind::Similar, tau: 0.95, per_class: 0 },
            StagePlan { kind: StageKind::SelfLabeled, tau: 0.0, per_class: 10 },
            StagePlan { kind: StageKind::SimilarToSelf, tau: 0.95, per_class: 0 },
        ],
        hyper: NGramHyper { ngram: 1, dim: 128, epochs: 30, learning_rate: 1.0, history: 0, ..NGramHyper::default() },
        ..IterationPlan::default()
    };
    let tax = LabelTaxonomy::default();
    let data = SemiSupData { taxonomy: &tax, labeled: &labeled, unlabeled: &unlabeled };
    let (models, report) = run_iterations(&plan, &data, &BuiltinEmbedder::default())?;
    println!("{} models; split {} / {} / {}", models.len(), report.split.train.len(), report.split.validation.len(), report.split.test.len());
    print!("{}", report.render());
    Ok(())
}
