//! Train the built-in n-gram softmax labeler on seed sentences, predict
//! with dialogue history, and round-trip the model file.

use subtalk::labeling::{train_classifier, ContextWindow, LabelTaxonomy, Labeler, NGramHyper, NGramSoftmaxModel, TrainingExample};
use subtalk::pipeline::synth::{generate_corpus, SynthConfig};

#[derive(serde::Deserialize)]
struct Seed {
    text: String,
    label: String,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    generate_corpus(dir.path(), &SynthConfig { files: 1, ..SynthConfig::mini() })?;
    let seed: Vec<Seed> =
        std::fs::read_to_string(dir.path().join("weak_seed.jsonl"))?.lines().map(serde_json::from_str).collect::<Result<_, _>>()?;
    let examples: Vec<TrainingExample> = seed.into_iter().map(|s| TrainingExample { window: ContextWindow::single(s.text), label: s.label }).collect();

    let tax = LabelTaxonomy::default();
    let hyper = NGramHyper { epochs: 30, learning_rate: 0.5, ..NGramHyper::default() };
    let (model, report) = train_classifier(&examples, &tax, &hyper, None)?;
    println!("{} examples, final train loss {:.4}", examples.len(), report.epoch_train_loss.last().unwrap());

    let windows = [
        ContextWindow::single("Wow, the lights went out again."),
        ContextWindow::new("I am sorry, the money is gone.", vec!["My dog died last night, tears everywhere.".into()]),
    ];
    for w in &windows {
        let p = model.predict(w)?;
        println!("{:?} -> {} ({:.3})", w.target, tax.name(p.top), p.confidence);
    }

    let path = dir.path().join("model.bin");
    model.save(&path)?;
    let back = NGramSoftmaxModel::load(&path)?;
    assert_eq!(back.predict(&windows[0])?, model.predict(&windows[0])?);
    println!("model file {} bytes", std::fs::metadata(&path)?.len());
    Ok(())
}
