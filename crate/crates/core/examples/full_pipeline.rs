//! Every stage on a fresh synthetic corpus, with a simulated crowd.

use subtalk::pipeline::synth::{generate_corpus, SynthConfig};
use subtalk::pipeline::{Pipeline, PipelineConfig, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    generate_corpus(&dir.path().join("corpus"), &SynthConfig::mini())?;
    let overrides = [
        "annotation.simulate=true",
        "filter.keep_fraction=0.8",
        "labeler.hyper.epochs=50",
        "labeler.hyper.learning_rate=0.5",
        "semisup.hyper.ngram=1",
        "semisup.hyper.learning_rate=1.0",
        "semisup.tau_similar=0.8",
        "semisup.tau_self=0.8",
    ]
    .map(String::from);
    let mut cfg = PipelineConfig::from_toml_with("[paths]\ncorpus = \"corpus\"\nwork = \"work\"\n", &overrides)?;
    cfg.resolve_paths(dir.path());

    let mut p = Pipeline::open(cfg)?;
    for o in p.run_all(false)? {
        println!("{:<18} {:>6} ms", o.stage, o.elapsed_ms);
    }
    for (stage, file) in [(Stage::Stats, "stats.txt"), (Stage::Aggregate, "summary.txt"), (Stage::Evaluate, "report.txt")] {
        println!();
        print!("{}", std::fs::read_to_string(p.stage_dir(stage).join(file))?);
    }
    // A second pass finds everything current.
    assert!(p.run_all(false)?.iter().all(|o| o.skipped));
    Ok(())
}
