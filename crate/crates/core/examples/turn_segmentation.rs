//! Train the sentence-boundary segmenter on labeled pairs and merge a
//! document's sentences into turns.

use subtalk::corpus::{parse_subtitles, segment_sentences, AbbreviationList, ParseOptions, SubtitleFormat};
use subtalk::pipeline::synth::{generate_corpus, SynthConfig};
use subtalk::segment::{labeled_features, segment_turns, train_segmenter, BoundaryInstance, BoundaryRecord, FeatureConfig, RuleLemmatizer, SegmenterHyper};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    generate_corpus(dir.path(), &SynthConfig { files: 2, dialogues_per_file: 4, ..SynthConfig::mini() })?;

    let records: Vec<BoundaryRecord> =
        std::fs::read_to_string(dir.path().join("boundaries.jsonl"))?.lines().map(serde_json::from_str).collect::<Result<_, _>>()?;
    let instances: Vec<BoundaryInstance> = records.iter().map(BoundaryInstance::from).collect();
    let lemm = RuleLemmatizer::default();
    let cfg = FeatureConfig::default();
    let data = labeled_features(&instances, &lemm, &cfg)?;
    let (model, report) = train_segmenter(&data, &SegmenterHyper::default(), None)?;
    println!("{} training pairs, train accuracy {:.3}", data.len(), report.train_accuracy);

    let raw = std::fs::read(dir.path().join("ep001.srt"))?;
    let doc = parse_subtitles(&raw, SubtitleFormat::Srt, &ParseOptions::new("ep001"))?.document;
    let sentences = segment_sentences(&doc, &AbbreviationList::default());
    let turns = segment_turns(&doc, &sentences, &model, &lemm, &cfg)?;
    println!("{} sentences -> {} turns", sentences.len(), turns.len());
    for t in turns.iter().take(8) {
        println!("  [{:>6?} ms] {}", t.start_ms, t.text);
    }
    Ok(())
}
