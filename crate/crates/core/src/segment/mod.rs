//! Turn segmentation: decide whether consecutive sentences belong to the
//! same speaker turn, then merge sentence runs into turns.

mod features;
mod lemma;
mod model;

use rayon::prelude::*;
use thiserror::Error;

pub use features::{
    base_families, collision_rate, density_bucket, extract_boundary_features, feature_keys, BoundaryInstance,
    BoundaryLabel, BoundaryRecord, CollisionStats, FeatureConfig, SparseFeatureVector, FAMILIES,
};
pub use lemma::{IdentityLemmatizer, Lemmatizer, RuleLemmatizer};
pub use model::{train_segmenter, LinearSegmenter, SegmenterHyper, TrainReport};

use crate::corpus::{sentence_density, Sentence, SubtitleDocument};
use crate::dialogue::Turn;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("need at least 2 labeled instances, got {0}")]
    TooFewInstances(usize),
    #[error("instance {0} has no label")]
    Unlabeled(usize),
    #[error("training set contains only {0} instances; both labels are required")]
    SingleClass(&'static str),
    #[error("model uses {model} hash bits but features were extracted with {features}")]
    HashBitsMismatch { model: u8, features: u8 },
    #[error("invalid segmenter model: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Boundary instances for every adjacent sentence pair of a document.
pub fn boundary_instances(doc: &SubtitleDocument, sentences: &[Sentence]) -> Vec<BoundaryInstance> {
    let density = sentence_density(doc, sentences.len());
    sentences
        .windows(2)
        .map(|w| BoundaryInstance {
            sent_a: w[0].clone(),
            sent_b: w[1].clone(),
            same_block: w[0].block_index == w[1].block_index,
            genre: doc.genre.clone(),
            density,
            label: None,
        })
        .collect()
}

/// Extracts features for labeled instances, in parallel.
pub fn labeled_features(
    instances: &[BoundaryInstance],
    lemmatizer: &dyn Lemmatizer,
    cfg: &FeatureConfig,
) -> Result<Vec<(SparseFeatureVector, BoundaryLabel)>, SegmentError> {
    if let Some(i) = instances.iter().position(|x| x.label.is_none()) {
        return Err(SegmentError::Unlabeled(i));
    }
    Ok(instances
        .par_iter()
        .map(|inst| (extract_boundary_features(inst, lemmatizer, cfg), inst.label.unwrap()))
        .collect())
}

/// Greedy left-to-right merge: sentence `i+1` joins the current turn iff
/// the model predicts `same_turn` for the pair `(i, i+1)`.
pub fn segment_turns(
    doc: &SubtitleDocument,
    sentences: &[Sentence],
    model: &LinearSegmenter,
    lemmatizer: &dyn Lemmatizer,
    cfg: &FeatureConfig,
) -> Result<Vec<Turn>, SegmentError> {
    if model.hash_bits != cfg.hash_bits {
        return Err(SegmentError::HashBitsMismatch { model: model.hash_bits, features: cfg.hash_bits });
    }
    let decisions: Vec<BoundaryLabel> = boundary_instances(doc, sentences)
        .par_iter()
        .map(|inst| model.predict(&extract_boundary_features(inst, lemmatizer, cfg)))
        .collect();
    Ok(merge_sentences(&doc.doc_id, sentences, &decisions))
}

/// Builds turns from sentences and per-boundary decisions
/// (`decisions.len() == sentences.len() - 1`).
pub fn merge_sentences(doc_id: &str, sentences: &[Sentence], decisions: &[BoundaryLabel]) -> Vec<Turn> {
    let mut turns = Vec::new();
    let Some(first) = sentences.first() else {
        return turns;
    };
    let mut texts = vec![first.text.as_str()];
    let mut start = first.start_ms;
    let mut end = first.end_ms;
    for (s, d) in sentences[1..].iter().zip(decisions) {
        if *d == BoundaryLabel::SameTurn {
            texts.push(&s.text);
            end = s.end_ms;
        } else {
            turns.push(Turn::new(texts.join(" "), start, end, doc_id));
            texts = vec![&s.text];
            start = s.start_ms;
            end = s.end_ms;
        }
    }
    turns.push(Turn::new(texts.join(" "), start, end, doc_id));
    turns
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SubtitleBlock;
    use proptest::prelude::*;

    fn sentence(text: &str, block: u32) -> Sentence {
        Sentence { text: text.into(), block_index: block, order_in_block: 0, start_ms: Some(block as u64 * 1000), end_ms: Some(block as u64 * 1000 + 800) }
    }

    /// Same block ⇔ same turn; the words themselves are random noise.
    fn separable(n: usize, seed: u64) -> Vec<BoundaryInstance> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let words = ["yes", "no", "maybe", "go", "stop", "now", "later", "why", "what", "here"];
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| {
            (0..rng.random_range(1..5)).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        };
        (0..n)
            .map(|i| {
                let same = i % 2 == 0;
                BoundaryInstance {
                    sent_a: sentence(&pick(&mut rng), 1),
                    sent_b: sentence(&pick(&mut rng), if same { 1 } else { 2 }),
                    same_block: same,
                    genre: None,
                    density: None,
                    label: Some(if same { BoundaryLabel::SameTurn } else { BoundaryLabel::NewTurn }),
                }
            })
            .collect()
    }

    fn cfg() -> FeatureConfig {
        FeatureConfig { hash_bits: 18, max_crosses: 2048 }
    }

    fn feats(insts: &[BoundaryInstance]) -> Vec<(SparseFeatureVector, BoundaryLabel)> {
        labeled_features(insts, &RuleLemmatizer::default(), &cfg()).unwrap()
    }

    #[test]
    fn separable_fixture_is_learned_exactly() {
        let train = feats(&separable(100, 1));
        let held_out = feats(&separable(100, 2));
        let (model, report) = train_segmenter(&train, &SegmenterHyper::default(), Some(&held_out)).unwrap();
        // Exhaustive check over every held-out instance.
        for (x, y) in &held_out {
            assert_eq!(model.predict(x), *y);
        }
        assert_eq!(report.validation_accuracy, Some(1.0));
    }

    #[test]
    fn inverted_labels_complement_predictions() {
        let train = feats(&separable(100, 1));
        let flipped: Vec<_> = train
            .iter()
            .map(|(x, y)| (x.clone(), if *y == BoundaryLabel::SameTurn { BoundaryLabel::NewTurn } else { BoundaryLabel::SameTurn }))
            .collect();
        let hyper = SegmenterHyper::default();
        let (m1, _) = train_segmenter(&train, &hyper, None).unwrap();
        let (m2, _) = train_segmenter(&flipped, &hyper, None).unwrap();
        for (x, _) in &train {
            assert_ne!(m1.predict(x), m2.predict(x));
        }
    }

    #[test]
    fn identical_vectors_predict_majority() {
        let base = separable(1, 3).remove(0);
        let insts: Vec<_> = (0..50)
            .map(|i| BoundaryInstance { label: Some(if i < 35 { BoundaryLabel::SameTurn } else { BoundaryLabel::NewTurn }), ..base.clone() })
            .collect();
        let train = feats(&insts);
        let (model, report) = train_segmenter(&train, &SegmenterHyper::default(), None).unwrap();
        assert!((report.train_accuracy - 0.7).abs() < 1e-12);
        assert_eq!(model.predict(&train[0].0), BoundaryLabel::SameTurn);
    }

    #[test]
    fn objective_non_increasing_on_separable_data() {
        let train = feats(&separable(100, 5));
        let hyper = SegmenterHyper { epochs: 15, ..SegmenterHyper::default() };
        let (_, report) = train_segmenter(&train, &hyper, None).unwrap();
        for w in report.epoch_objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", report.epoch_objective);
        }
    }

    #[test]
    fn refuses_single_class_and_tiny_sets() {
        let mut insts = separable(10, 1);
        insts.iter_mut().for_each(|i| i.label = Some(BoundaryLabel::NewTurn));
        assert!(matches!(train_segmenter(&feats(&insts), &SegmenterHyper::default(), None), Err(SegmentError::SingleClass(_))));
        assert!(matches!(train_segmenter(&feats(&insts[..1]), &SegmenterHyper::default(), None), Err(SegmentError::TooFewInstances(1))));
    }

    #[test]
    fn model_file_round_trip() {
        let (model, _) = train_segmenter(&feats(&separable(20, 1)), &SegmenterHyper::default(), None).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"SUBTSEG1");
        let back = LinearSegmenter::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
        buf[0] = b'X';
        assert!(LinearSegmenter::read_from(&mut buf.as_slice()).is_err());
    }

    fn constant_model(bias: f32) -> LinearSegmenter {
        LinearSegmenter { weights: vec![0.0; 1 << 18], bias, hash_bits: 18, training_meta: SegmenterHyper::default() }
    }

    fn doc_of(sentences: &[Sentence]) -> SubtitleDocument {
        let blocks = sentences
            .iter()
            .map(|s| SubtitleBlock { index: s.block_index, start_ms: s.start_ms, end_ms: s.end_ms, lines: vec![s.text.clone()] })
            .collect();
        SubtitleDocument { doc_id: "d".into(), genre: None, duration_ms: None, blocks, language: "en".into() }
    }

    #[test]
    fn degenerate_models() {
        let sents: Vec<_> = (1..=5).map(|i| sentence(&format!("Line {i}."), i)).collect();
        let doc = doc_of(&sents);
        let l = RuleLemmatizer::default();
        let split = segment_turns(&doc, &sents, &constant_model(-1.0), &l, &cfg()).unwrap();
        assert_eq!(split.iter().map(|t| t.text.as_str()).collect::<Vec<_>>(), sents.iter().map(|s| s.text.as_str()).collect::<Vec<_>>());
        // Zero score is a tie and merges.
        let merged = segment_turns(&doc, &sents, &constant_model(0.0), &l, &cfg()).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].text, "Line 1. Line 2. Line 3. Line 4. Line 5.");
        assert_eq!((merged[0].start_ms, merged[0].end_ms), (Some(1000), Some(5800)));
        let one = segment_turns(&doc, &sents[..1], &constant_model(1.0), &l, &cfg()).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].text, "Line 1.");
    }

    #[test]
    fn hash_bits_mismatch_is_rejected() {
        let sents = vec![sentence("a", 1), sentence("b", 2)];
        let bad = FeatureConfig { hash_bits: 20, ..cfg() };
        assert!(segment_turns(&doc_of(&sents), &sents, &constant_model(0.0), &RuleLemmatizer::default(), &bad).is_err());
    }

    #[test]
    fn missing_timestamps_propagate() {
        let mut sents = vec![sentence("a", 1), sentence("b", 1)];
        sents[1].end_ms = None;
        let turns = merge_sentences("d", &sents, &[BoundaryLabel::SameTurn]);
        assert_eq!(turns[0].end_ms, None);
    }

    proptest! {
        #[test]
        fn turns_partition_sentences(texts in proptest::collection::vec("[a-z]{1,6}", 1..12), cuts in proptest::collection::vec(any::<bool>(), 11)) {
            let sents: Vec<_> = texts.iter().enumerate().map(|(i, t)| sentence(t, i as u32 + 1)).collect();
            let decisions: Vec<_> = cuts[..sents.len() - 1].iter().map(|&c| if c { BoundaryLabel::NewTurn } else { BoundaryLabel::SameTurn }).collect();
            let turns = merge_sentences("d", &sents, &decisions);
            let joined_turns: String = turns.iter().flat_map(|t| t.text.split(' ')).collect();
            let joined_sents: String = sents.iter().map(|s| s.text.as_str()).collect();
            prop_assert_eq!(joined_turns, joined_sents);
            let words: usize = turns.iter().map(|t| t.text.split(' ').count()).sum();
            prop_assert_eq!(words, sents.len());
        }
    }
}
