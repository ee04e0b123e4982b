//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances are pinned next to each check.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::Value;
use subtalk::analytics::{export_flow, flow_paths, label_distribution, transition_matrix, FlowFormat, LabeledDialogue};
use subtalk::annotation::server::router;
use subtalk::annotation::{aggregate_majority, fleiss_kappa, AggregateConfig, AggregationResult, AnnotationRecord, AnnotationStore, Choice};
use subtalk::dialogue::{clean_dialogues, split_dialogues, CleaningConfig, CleaningReport, Dialogue, Provenance, Turn};
use subtalk::embedding::{embed_dialogue, expand_by_similarity, expand_naive, EmbeddingSet, LabeledSet, SearchOptions, SimilarityMatch};
use subtalk::labeling::{
    half_decay_weights, train_classifier, ContextWindow, Label, LabelError, LabelKind, LabelTaxonomy, Labeler, NGramHyper, NGramSoftmaxModel,
    Prediction, TrainingExample,
};
use subtalk::pipeline::synth::{generate_corpus, SynthConfig};
use subtalk::pipeline::{CorpusLine, Pipeline, Stage};
use subtalk::readability::{build_vocabulary, dialogue_readability, rank_candidates, Candidate, ReadabilityParams};
use subtalk::semisup::{evaluate, ItemSource, IterationReport, LabeledItem};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("dialogue embedding weights", embedding_weights),
        ("similarity expansion matches exhaustive search", expansion_exact),
        ("readability matches an independent scorer", readability_oracle),
        ("cleaning rules and counters", cleaning_conformance),
        ("timestamp gap segmentation", segmentation_gate),
        ("classifier sanity", classifier_sanity),
        ("precision, recall, F1, accuracy", metrics_oracle),
        ("Fleiss kappa", kappa_checks),
        ("majority aggregation and HIT assignment", aggregation),
        ("analytics conservation and exports", analytics),
        ("throughput", throughput),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail} ({secs:.2}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn embedding_weights() -> Outcome {
    const TOL: f64 = 1e-9;
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    for _ in 0..50 {
        let v: Vec<Vec<f64>> = (0..3).map(|_| unit_vector(&mut rng, 768)).collect();
        let got = embed_dialogue(&v).map_err(|e| e.to_string())?;
        for (i, g) in got.iter().enumerate() {
            let want = 4.0 / 7.0 * v[2][i] + 2.0 / 7.0 * v[1][i] + 1.0 / 7.0 * v[0][i];
            worst = worst.max((g - want).abs());
        }
    }
    ensure!(worst < TOL, "three-turn embedding off by {worst:e}");
    for m in 1..=10 {
        let w = half_decay_weights(m);
        let sum: f64 = w.iter().sum();
        ensure!((sum - 1.0).abs() < TOL, "weights for {m} turns sum to {sum}");
        let norm = 2.0 - 0.5f64.powi(m as i32 - 1);
        for (j, x) in w.iter().enumerate() {
            ensure!((x - 0.5f64.powi(j as i32) / norm).abs() < TOL, "weight {j} of {m} is {x}");
        }
        let v: Vec<Vec<f64>> = (0..m).map(|_| unit_vector(&mut rng, 768)).collect();
        let got = embed_dialogue(&v).map_err(|e| e.to_string())?;
        for (i, g) in got.iter().enumerate() {
            let want: f64 = (0..m).map(|j| w[j] * v[m - 1 - j][i]).sum();
            ensure!((g - want).abs() < TOL, "{m}-turn embedding off at {i}");
        }
    }
    let elapsed = t.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("max error {worst:.1e} over D=768, weights sum to 1 for 1..=10 turns"))
}

/// Highest cosine wins, then the smaller labeled id; zero vectors never match.
fn oracle_expand(labeled: &[(String, Vec<f32>, String)], unlabeled: &[(String, Vec<f32>)], tau: f64) -> Vec<(String, String, String)> {
    let norm = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>();
    let mut out = Vec::new();
    for (uid, u) in unlabeled {
        let nu = norm(u);
        if nu == 0.0 {
            continue;
        }
        let mut best: Option<(f64, &str, &str)> = None;
        for (lid, l, label) in labeled {
            let dot: f64 = u.iter().zip(l).map(|(&a, &b)| a as f64 * b as f64).sum();
            let c = dot / (nu * norm(l)).sqrt();
            let better = match best {
                None => true,
                Some((bc, bid, _)) => c > bc || (c == bc && lid.as_str() < bid),
            };
            if better {
                best = Some((c, lid, label));
            }
        }
        if let Some((c, lid, label)) = best {
            if c >= tau {
                out.push((uid.clone(), lid.to_string(), label.to_string()));
            }
        }
    }
    out
}

fn expansion_exact() -> Outcome {
    let t = Instant::now();
    let axis = |i: usize| {
        let mut v = vec![0f32; 4];
        v[i] = 1.0;
        v
    };
    let at = |a: usize, b: usize, c: f64| {
        let mut v = vec![0f32; 4];
        v[a] = c as f32;
        v[b] = (1.0 - c * c).sqrt() as f32;
        v
    };
    let labeled: Vec<(String, Vec<f32>, String)> = [(axis(0), "Sad"), (axis(1), "Joyful"), (axis(2), "Angry"), (axis(0), "Afraid"), (axis(3), "Neutral")]
        .into_iter()
        .enumerate()
        .map(|(i, (v, l))| (format!("l{i}"), v, l.to_string()))
        .collect();
    let unlabeled: Vec<(String, Vec<f32>)> = [
        axis(0),
        at(0, 1, 0.9201),
        at(1, 3, 0.9199),
        at(2, 1, 0.9001),
        at(2, 3, 0.8999),
        vec![0.5, 0.5, 0.5, 0.5],
        vec![0.0; 4],
        vec![0.0, 0.0, 0.0, 3.0],
    ]
    .into_iter()
    .enumerate()
    .map(|(i, v)| (format!("u{i}"), v))
    .collect();

    let lset = LabeledSet {
        set: EmbeddingSet::from_rows(labeled.iter().map(|l| l.0.clone()).collect(), &labeled.iter().map(|l| l.1.clone()).collect::<Vec<_>>(), 4)
            .map_err(|e| e.to_string())?,
        labels: labeled.iter().map(|l| l.2.clone()).collect(),
    };
    let uset = EmbeddingSet::from_rows(unlabeled.iter().map(|u| u.0.clone()).collect(), &unlabeled.iter().map(|u| u.1.clone()).collect::<Vec<_>>(), 4)
        .map_err(|e| e.to_string())?;
    let triples = |m: &[SimilarityMatch]| m.iter().map(|m| (m.unlabeled_id.clone(), m.labeled_id.clone(), m.label.clone())).collect::<Vec<_>>();

    // Expected match counts worked out by hand for each threshold.
    let taus = [(0.5, 7), (0.9, 5), (0.92, 3), (1.0, 2)];
    let mut previous: Option<Vec<(String, String, String)>> = None;
    for (tau, want_len) in taus {
        let want = oracle_expand(&labeled, &unlabeled, tau);
        ensure!(want.len() == want_len, "oracle found {} matches at tau={tau}, expected {want_len}", want.len());
        for opts in [SearchOptions::default(), SearchOptions { tile_rows: 1, block_rows: 1 }, SearchOptions { tile_rows: 3, block_rows: 2 }] {
            let got = expand_by_similarity(&lset, &uset, None, tau, &opts).map_err(|e| e.to_string())?;
            ensure!(triples(&got) == want, "tau={tau} {opts:?}: got {:?}, want {want:?}", triples(&got));
        }
        let naive = expand_naive(&lset, &uset, None, tau).map_err(|e| e.to_string())?;
        ensure!(triples(&naive) == want, "naive search disagrees at tau={tau}");
        if let Some(prev) = &previous {
            ensure!(want.iter().all(|m| prev.contains(m)), "matches at tau={tau} are not a subset of the lower threshold");
        }
        previous = Some(want);
    }
    let at1 = expand_by_similarity(&lset, &uset, None, 1.0, &SearchOptions::default()).map_err(|e| e.to_string())?;
    ensure!(at1.iter().all(|m| m.cosine == 1.0), "identical directions do not score exactly 1");
    ensure!(at1[0].labeled_id == "l0", "tie between l0 and l3 went to {}", at1[0].labeled_id);
    let elapsed = t.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok("5x8 fixture agrees with the exhaustive oracle at tau 0.5/0.9/0.92/1.0; matches shrink as tau rises".into())
}

fn dlg(id: &str, turns: &[&str]) -> Dialogue {
    Dialogue {
        dialogue_id: id.to_string(),
        doc_id: "doc".into(),
        turns: turns.iter().map(|t| Turn::new(*t, None, None, "doc")).collect(),
        provenance: Provenance::Cleaned,
    }
}

fn readability_oracle() -> Outcome {
    const TOL: f64 = 1e-9;
    let texts: [&[&str]; 20] = [
        &["Where are you going?", "Out."],
        &["I don't know.", "You don't know?"],
        &["It's 5 o'clock.", "Already? We're late!"],
        &["She said \u{201c}no\u{201d} twice.", "Twice?!"],
        &["Come here, now.", "Why?", "Because I said so."],
        &["The the the.", "A a."],
        &["Où est la gare?", "Là-bas."],
        &["We can't, we won\u{2019}t, we shouldn't.", "Fine."],
        &["Call 911!", "On it."],
        &["Where are you going?", "Out."],
        &["Nothing... nothing at all.", "Okay then."],
        &["I love you.", "I know."],
        &["Rock 'n' roll!", "Yeah."],
        &["Mr. Smith's car.", "It's red."],
        &["Run!", "Hide!", "Now!"],
        &["What is it, Tom?", "A letter from the bank."],
        &["Hmm.", "Hmm?"],
        &["2 + 2 = 4", "Correct."],
        &["I love you.", "I know."],
        &["Dinner's at eight, don't be late.", "I won't."],
    ];
    let dialogues: Vec<Dialogue> = texts.iter().enumerate().map(|(i, t)| dlg(&format!("r{i:02}"), t)).collect();

    let word = Regex::new(r"[\p{Alphabetic}\p{N}]+(?:['\u{2019}][\p{Alphabetic}\p{N}]+)*").unwrap();
    let tokens = |text: &str| word.find_iter(text).map(|m| m.as_str().to_lowercase()).collect::<Vec<_>>();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for t in texts.iter().flat_map(|d| d.iter()) {
        for tok in tokens(t) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    let vocab = build_vocabulary(&dialogues);
    ensure!(vocab.total_tokens() == total, "vocabulary holds {} tokens, oracle {total}", vocab.total_tokens());
    ensure!(vocab.counts() == &counts, "vocabulary counts differ from the oracle");

    let params = ReadabilityParams::default();
    let mut worst = 0f64;
    let mut scores = Vec::new();
    for (d, t) in dialogues.iter().zip(&texts) {
        let toks: Vec<String> = t.iter().flat_map(|x| tokens(x)).collect();
        let n = toks.len() as f64;
        let f = toks.iter().map(|x| counts[x] as f64 / total as f64).sum::<f64>() / (params.alpha + n);
        let d_ratio = toks.iter().collect::<HashSet<_>>().len() as f64 / n;
        let want = f + params.w_d * d_ratio;
        let got = dialogue_readability(d, &vocab, &params).map_err(|e| e.to_string())?;
        worst = worst.max((got.score - want).abs()).max((got.f - f).abs()).max((got.d - d_ratio).abs());
        scores.push(got.score);
    }
    ensure!(worst < TOL, "scores differ from the oracle by {worst:e}");

    let classes = ["Sad", "Joyful", "Afraid"];
    let candidates: Vec<Candidate> =
        dialogues.iter().zip(&scores).enumerate().map(|(i, (d, &s))| Candidate { id: d.dialogue_id.clone(), class: classes[i % 3].into(), score: s }).collect();
    let mut ties = 0;
    for c in &candidates {
        ties += candidates.iter().filter(|o| o.id > c.id && o.score == c.score).count();
    }
    ensure!(ties >= 2, "fixture should contain tied scores, found {ties}");
    let reference = rank_candidates(&candidates, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let mut shuffled = candidates.clone();
        shuffled.shuffle(&mut rng);
        ensure!(rank_candidates(&shuffled, 5) == reference, "ranking depends on input order");
    }
    for class in classes {
        let mut want: Vec<&Candidate> = candidates.iter().filter(|c| c.class == class).collect();
        want.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.id.cmp(&b.id)));
        let want: Vec<&str> = want.iter().take(5).map(|c| c.id.as_str()).collect();
        let got: Vec<&str> = reference[class].iter().map(|c| c.id.as_str()).collect();
        ensure!(got == want, "{class}: ranked {got:?}, want {want:?}");
    }
    Ok(format!("20 dialogues within {worst:.1e}; ranking stable over 10 shuffles with {ties} tied pairs"))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Rule {
    Names,
    Recap,
    Length,
    Alpha,
    Repetitive,
    Duplicate,
}

enum Want {
    /// Every turn survives, with these cleaned texts.
    Keep(&'static [&'static str]),
    /// Turn `at` fails `rule`; the listed turns before it survive.
    Cut(Rule, usize, &'static [&'static str]),
    /// Survives turn cleaning but repeats an earlier dialogue.
    Dup,
}

const C100: &str = "We drove along the coast for hours, stopping at every little town that still had a bakery open late.";
const C101: &str = "We drove along the coast for hours, stopping at every little town that still had a bakery open late!!";

fn cleaning_fixture() -> Vec<(&'static [&'static str], Want)> {
    use Rule::*;
    use Want::*;
    vec![
        (&["Where are you going?", "Out."], Keep(&["Where are you going?", "Out."])),
        (&["Hi.", "Hello there.", "How are you?"], Keep(&["Hi.", "Hello there.", "How are you?"])),
        (&["Previously on the show.", "Hi."], Cut(Recap, 0, &[])),
        (&["Hi there.", "previously on Lost, they crashed.", "What?"], Cut(Recap, 1, &["Hi there."])),
        (&["JOHN:", "Okay."], Cut(Names, 0, &[])),
        (&["JOHN: Come here.", "- I'm coming.", "Okay."], Keep(&["Come here.", "I'm coming.", "Okay."])),
        (&["Fine.", "I"], Cut(Length, 1, &["Fine."])),
        (&["Ok", "No"], Keep(&["Ok", "No"])),
        (&["Sure.", C101], Cut(Length, 1, &["Sure."])),
        (&[C100, "That sounds lovely."], Keep(&[C100, "That sounds lovely."])),
        (&["abc12", "Go on."], Keep(&["abc12", "Go on."])),
        (&["Wait, wait, wait, wait, what?", "Nothing."], Keep(&["Wait, wait, wait, wait, what?", "Nothing."])),
        (&["Dr. Hale: come in.", "Thanks."], Keep(&["come in.", "Thanks."])),
        (&["12:30 works.", "Fine."], Cut(Alpha, 0, &[])),
        (&["Mr. Big Deal Name: hi", "Hey."], Keep(&["Mr. Big Deal Name: hi", "Hey."])),
        (&["\u{2014} Run!", "\u{2013} Why?"], Keep(&["Run!", "Why?"])),
        (&["no no no no no no no no no no no", "Stop."], Cut(Repetitive, 0, &[])),
        (&["la la la la la la la la la", "Sing."], Keep(&["la la la la la la la la la", "Sing."])),
        (&["go go go go go stop now then wait here", "Ok"], Keep(&["go go go go go stop now then wait here", "Ok"])),
        (&["Right.", "no, no, no, no, no, no"], Cut(Repetitive, 1, &["Right."])),
        (&["12345 678!!", "What?"], Cut(Alpha, 0, &[])),
        (&["\u{266a} \u{266a} \u{266a}", "La."], Cut(Alpha, 0, &[])),
        (&["Yes.", "Yes.", "No."], Cut(Duplicate, 1, &["Yes."])),
        (&["Yes.", "No.", "Yes."], Keep(&["Yes.", "No.", "Yes."])),
        (&["Again?", "again?"], Keep(&["Again?", "again?"])),
        (&["One.", "Two.", "Three.", "Four.", "12345"], Cut(Alpha, 4, &["One.", "Two.", "Three.", "Four."])),
        (&["Where are you going?", "Out."], Dup),
        (&["JOHN: Where are you going?", "Out."], Dup),
        (&["Where are you going?", "Out.", "Now."], Keep(&["Where are you going?", "Out.", "Now."])),
        (&["Where   are you\tgoing?", "Out."], Dup),
        (&["Fine.", "Previously on", "Ok"], Cut(Recap, 1, &["Fine."])),
        (&[" ", "Hi."], Cut(Names, 0, &[])),
        (&["Hi.", "Yo.", "Hey.", "MARY:"], Cut(Names, 3, &["Hi.", "Yo.", "Hey."])),
        (&["We won!", "We won!", "We won!"], Cut(Duplicate, 1, &["We won!"])),
        (&["Okay.", C100], Keep(&["Okay.", C100])),
        (&[C100, "Okay."], Keep(&[C100, "Okay."])),
        (&["A:", "Bee."], Cut(Names, 0, &[])),
        (&["Stop it!", "NO NO NO NO NO NO NO NO NO NO"], Cut(Repetitive, 1, &["Stop it!"])),
        (&["I can't.", "You can\u{2019}t?"], Keep(&["I can't.", "You can\u{2019}t?"])),
        (&["Ha.", "Ha."], Cut(Duplicate, 1, &["Ha."])),
        (&["Look.", "Ok", "Look."], Keep(&["Look.", "Ok", "Look."])),
        (&["abc1", "Sure."], Keep(&["abc1", "Sure."])),
        (&["ab123", "Sure."], Cut(Alpha, 0, &[])),
        (&["Yes, sir.", "Yes, sir."], Cut(Duplicate, 1, &["Yes, sir."])),
        (&["Okay.", "Okay.", "Okay."], Cut(Duplicate, 1, &["Okay."])),
        (&["Hi.", "Hello there.", "How are you?"], Dup),
        (&["- Hi.", "Hello there.", "How are you?"], Dup),
        (&["Hi.", "Hello there."], Keep(&["Hi.", "Hello there."])),
        (&["Wait.", "Go.", "no no no no no no no no no no", "Later."], Cut(Repetitive, 2, &["Wait.", "Go."])),
        (&["Hmm.", "x"], Cut(Length, 1, &["Hmm."])),
        (&["Yes.", "No."], Keep(&["Yes.", "No."])),
        (&["Yes.", "No."], Dup),
        (&["Ok", "Ok."], Keep(&["Ok", "Ok."])),
        (&["JANE DOE: Hi.", "BOB: Hey."], Keep(&["Hi.", "Hey."])),
        (&["Hi.", "Hey."], Dup),
        (&["Run.", "Previously on Lost", "Hide."], Cut(Recap, 1, &["Run."])),
        (&["Look, previously on the news they said so.", "Really?"], Keep(&["Look, previously on the news they said so.", "Really?"])),
        (&["What's that?", "A bird.", "A plane.", "A bird."], Keep(&["What's that?", "A bird.", "A plane.", "A bird."])),
        (&["\u{bf}Qu\u{e9}?", "Nada."], Keep(&["\u{bf}Qu\u{e9}?", "Nada."])),
        (&["1", "Hi."], Cut(Length, 0, &[])),
    ]
}

/// Speaker labels and dashes stripped across the fixture, counted by hand.
const FIXTURE_NAMES_STRIPPED: usize = 12;

fn cleaning_conformance() -> Outcome {
    let fixture = cleaning_fixture();
    let input: Vec<Dialogue> = fixture.iter().enumerate().map(|(i, (turns, _))| dlg(&format!("c{:02}", i + 1), turns)).collect();
    let mut want = CleaningReport { input_dialogues: input.len(), names_stripped: FIXTURE_NAMES_STRIPPED, ..Default::default() };
    let mut survivors: Vec<(String, Vec<&str>)> = Vec::new();
    for (d, (turns, w)) in input.iter().zip(&fixture) {
        want.input_turns += turns.len();
        match w {
            Want::Keep(out) => survivors.push((d.dialogue_id.clone(), out.to_vec())),
            Want::Dup => {
                want.removed_duplicate_dialogues += 1;
                want.removed_duplicate_dialogue_turns += turns.len();
            }
            Want::Cut(rule, at, kept) => {
                *match rule {
                    Rule::Names => &mut want.removed_names,
                    Rule::Recap => &mut want.removed_recap,
                    Rule::Length => &mut want.removed_char_length,
                    Rule::Alpha => &mut want.removed_alpha_ratio,
                    Rule::Repetitive => &mut want.removed_repetitive,
                    Rule::Duplicate => &mut want.removed_duplicate,
                } += 1;
                want.dropped_suffix_turns += turns.len() - at - 1;
                if kept.len() < 2 {
                    want.dropped_single_turn_dialogues += 1;
                    want.dropped_single_turn_dialogue_turns += kept.len();
                } else {
                    survivors.push((d.dialogue_id.clone(), kept.to_vec()));
                }
            }
        }
    }
    want.output_dialogues = survivors.len();
    want.output_turns = survivors.iter().map(|s| s.1.len()).sum();

    let (out, report) = clean_dialogues(&input, &CleaningConfig::default());
    let got: Vec<(String, Vec<&str>)> = out.iter().map(|d| (d.dialogue_id.clone(), d.texts())).collect();
    ensure!(got == survivors, "survivors differ:\n got {got:?}\nwant {survivors:?}");
    ensure!(report == want, "counters differ:\n got {report:?}\nwant {want:?}");
    ensure!(report.input_turns == report.output_turns + report.removed_turns(), "turn counters do not reconcile");
    ensure!(
        report.input_dialogues == report.output_dialogues + report.dropped_single_turn_dialogues + report.removed_duplicate_dialogues,
        "dialogue counters do not reconcile"
    );
    ensure!(out.iter().all(|d| d.provenance == Provenance::Cleaned), "survivors not marked cleaned");
    Ok(format!("{} dialogues, {} survive, {} turns removed, counters reconcile", input.len(), out.len(), report.removed_turns()))
}

fn segmentation_gate() -> Outcome {
    let pair = |end: Option<u64>, start: Option<u64>| vec![Turn::new("First line.", Some(0), end, "doc"), Turn::new("Second line.", start, start.map(|s| s + 800), "doc")];
    let cases = [
        ("gap 4999", pair(Some(1000), Some(5999)), 1),
        ("gap 5000", pair(Some(1000), Some(6000)), 1),
        ("gap 5001", pair(Some(1000), Some(6001)), 2),
        ("missing end", pair(None, Some(60_000)), 1),
        ("missing start", pair(Some(1000), None), 1),
    ];
    for (name, turns, want) in &cases {
        let got = split_dialogues(turns, 5000).len();
        ensure!(got == *want, "{name}: {got} dialogues, want {want}");
    }
    let mut other_doc = pair(Some(1000), Some(1500));
    other_doc[1].doc_id = "other".into();
    ensure!(split_dialogues(&other_doc, 5000).len() == 2, "turns from different documents merged");
    Ok("4999 and 5000 ms merge, 5001 ms splits, missing timestamps merge".into())
}

fn separable(tax: &LabelTaxonomy, per_class: usize, seed: u64) -> Vec<TrainingExample> {
    let filler = ["well", "then", "you", "know", "the", "thing", "is", "so", "okay", "we"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for name in tax.names() {
        for _ in 0..per_class {
            let mut words: Vec<&str> = (0..rng.random_range(2..6)).map(|_| filler[rng.random_range(0..filler.len())]).collect();
            let at = rng.random_range(0..=words.len());
            words.insert(at, name);
            out.push(TrainingExample { window: ContextWindow::single(words.join(" ")), label: name.to_string() });
        }
    }
    out
}

fn accuracy_on(m: &NGramSoftmaxModel, tax: &LabelTaxonomy, data: &[TrainingExample]) -> f64 {
    data.iter().filter(|e| tax.name(m.predict_window(&e.window).top) == e.label).count() as f64 / data.len() as f64
}

fn check_prediction(p: &Prediction, k: usize) -> Result<(), String> {
    ensure!(p.distribution.len() == k, "distribution has {} entries", p.distribution.len());
    ensure!(p.distribution.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)), "probability out of range");
    let sum: f64 = p.distribution.iter().sum();
    ensure!((sum - 1.0).abs() < 1e-6, "distribution sums to {sum}");
    ensure!(p.confidence == p.distribution[p.top], "confidence is not the top probability");
    ensure!(p.distribution.iter().all(|&x| x <= p.confidence), "top is not the argmax");
    Ok(())
}

fn classifier_sanity() -> Outcome {
    let tax = LabelTaxonomy::default();
    let train = separable(&tax, 20, 1);
    let held_out = separable(&tax, 5, 2);
    let hyper = NGramHyper { epochs: 20, learning_rate: 0.5, ..Default::default() };
    let t = Instant::now();
    let (model, _) = train_classifier(&train, &tax, &hyper, None).map_err(|e| e.to_string())?;
    let train_time = t.elapsed();
    let (acc_train, acc_held) = (accuracy_on(&model, &tax, &train), accuracy_on(&model, &tax, &held_out));
    ensure!(acc_train >= 0.99, "train accuracy {acc_train:.3}");
    ensure!(acc_held >= 0.95, "held-out accuracy {acc_held:.3}");
    ensure!(train_time < Duration::from_secs(60), "training took {train_time:?}");

    let (untrained, _) = train_classifier(&train, &tax, &NGramHyper { epochs: 0, ..Default::default() }, None).map_err(|e| e.to_string())?;
    let p = untrained.predict_window(&ContextWindow::single("anything at all"));
    ensure!(p.distribution.iter().all(|x| (x - 1.0 / 41.0).abs() < 1e-3), "untrained model is not uniform");

    let pool: Vec<char> = "abcXYZ019 .,!?'\u{2019}\u{e9}\u{df}\u{4f60}\u{1f600}\t\n\u{0}-:".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let text = |rng: &mut ChaCha8Rng| -> String { (0..rng.random_range(0..60)).map(|_| pool[rng.random_range(0..pool.len())]).collect() };
    for _ in 0..10_000 {
        let target = text(&mut rng);
        let history = (0..rng.random_range(0..4)).map(|_| text(&mut rng)).collect();
        check_prediction(&model.predict_window(&ContextWindow::new(target, history)), tax.len())?;
    }

    let mini = mini_run();
    let report: IterationReport = serde_json::from_str(&std::fs::read_to_string(mini.train.join("report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(report.stages.len() == 4, "train report has {} stages", report.stages.len());
    let sizes: Vec<usize> = report.stages.iter().map(|s| s.train_size).collect();
    ensure!(sizes.windows(2).all(|w| w[0] < w[1]), "train sizes not strictly increasing: {sizes:?}");
    let accs: Vec<String> = report.stages.iter().map(|s| format!("{:.2}", s.metrics.accuracy)).collect();
    Ok(format!(
        "train {:.1}%, held-out {:.1}% in {:.1}s; 10k fuzzed windows valid; mini stages {sizes:?} acc {accs:?}",
        100.0 * acc_train,
        100.0 * acc_held,
        train_time.as_secs_f64()
    ))
}

/// Predicts the class id written in the target turn as `p<id>`.
struct Scripted(usize);

impl Labeler for Scripted {
    fn num_labels(&self) -> usize {
        self.0
    }

    fn predict(&self, w: &ContextWindow) -> Result<Prediction, LabelError> {
        let id: usize = w.target.trim_start_matches('p').parse().unwrap();
        let mut d = vec![0.0; self.0];
        d[id] = 1.0;
        Prediction::from_distribution(d)
    }
}

fn taxonomy_of(k: usize) -> LabelTaxonomy {
    LabelTaxonomy::new((0..k).map(|i| Label { name: format!("L{i}"), kind: LabelKind::Emotion }).collect()).unwrap()
}

fn items_from_confusion(m: &[Vec<u64>]) -> Vec<LabeledItem> {
    let mut out = Vec::new();
    for (g, row) in m.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                let id = format!("i{}", out.len());
                out.push(LabeledItem { dialogue_id: id.clone(), id, turns: vec![format!("p{p}")], label: format!("L{g}"), source: ItemSource::Crowd });
            }
        }
    }
    out
}

fn metrics_oracle() -> Outcome {
    const TOL: f64 = 1e-9;
    // Confusion matrices with macro scores computed by hand, as fractions.
    let cases: [(Vec<Vec<u64>>, [f64; 4]); 3] = [
        (vec![vec![5, 1], vec![2, 2]], [29.0 / 42.0, 2.0 / 3.0, 61.0 / 91.0, 7.0 / 10.0]),
        (vec![vec![3, 0, 1], vec![0, 0, 2], vec![1, 0, 3]], [5.0 / 12.0, 1.0 / 2.0, 9.0 / 20.0, 6.0 / 10.0]),
        (vec![vec![2, 1, 1], vec![0, 3, 1], vec![0, 0, 0]], [7.0 / 12.0, 5.0 / 12.0, 17.0 / 36.0, 5.0 / 8.0]),
    ];
    for (i, (m, want)) in cases.iter().enumerate() {
        let k = m.len();
        let r = evaluate(&Scripted(k), &taxonomy_of(k), &items_from_confusion(m), &HashSet::new(), 0).map_err(|e| e.to_string())?;
        ensure!(&r.confusion == m, "case {i}: confusion {:?}", r.confusion);
        let got = [r.precision, r.recall, r.macro_f1, r.accuracy];
        for (name, (g, w)) in ["precision", "recall", "F1", "accuracy"].iter().zip(got.iter().zip(want)) {
            ensure!((g - 100.0 * w).abs() < TOL, "case {i}: {name} {g}, want {}", 100.0 * w);
        }
    }
    let balanced: Vec<Vec<u64>> = (0..41).map(|_| (0..41).map(|p| u64::from(p == 0)).collect()).collect();
    let r = evaluate(&Scripted(41), &taxonomy_of(41), &items_from_confusion(&balanced), &HashSet::new(), 0).map_err(|e| e.to_string())?;
    ensure!((r.accuracy - 100.0 / 41.0).abs() < TOL, "constant predictor accuracy {}", r.accuracy);
    let items = items_from_confusion(&cases[0].0);
    let leak: HashSet<String> = [items[3].id.clone()].into();
    ensure!(evaluate(&Scripted(2), &taxonomy_of(2), &items, &leak, 0).is_err(), "overlapping train and test ids accepted");
    Ok(format!("3 hand-scored confusions within {TOL:e}; constant predictor scores {:.4}%", r.accuracy))
}

fn kappa_checks() -> Outcome {
    let perfect: Vec<Vec<u64>> = (0..10).map(|i| if i % 2 == 0 { vec![3, 0] } else { vec![0, 3] }).collect();
    let k = fleiss_kappa(&perfect).kappa;
    ensure!(k == 1.0, "perfect agreement gives {k}");
    let k = fleiss_kappa(&[vec![2, 1], vec![1, 2], vec![3, 0]]).kappa;
    ensure!(k.abs() < 1e-9, "three-item fixture gives {k}, want 0");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let random: Vec<Vec<u64>> = (0..10_000)
        .map(|_| {
            let mut row = vec![0u64; 5];
            for _ in 0..3 {
                row[rng.random_range(0..5)] += 1;
            }
            row
        })
        .collect();
    let k_random = fleiss_kappa(&random).kappa;
    ensure!(k_random.abs() < 0.02, "random raters give {k_random}");
    Ok(format!("perfect 1.0, fixture 0, 10k random items {k_random:+.4}"))
}

fn vote(worker: &str, item: &str, label: &str) -> AnnotationRecord {
    AnnotationRecord {
        worker_id: worker.into(),
        hit_id: "h0".into(),
        item_id: item.into(),
        dialogue_id: Some(item.trim_end_matches("#0").into()),
        turn_index: Some(0),
        choice: Choice::Label(label.into()),
        chose_from_top3: true,
        timestamp_ms: 0,
    }
}

fn aggregation() -> Outcome {
    let tax = LabelTaxonomy::default();
    let mut records = Vec::new();
    for (item, labels) in [("a#0", ["Joyful", "Joyful", "Sad"]), ("b#0", ["Joyful", "Sad", "Angry"]), ("c#0", ["Angry", "Angry", "Angry"])] {
        for (w, l) in labels.iter().enumerate() {
            records.push(vote(&format!("w{w}"), item, l));
        }
    }
    let (results, summary) = aggregate_majority(&records, &[], &tax, &AggregateConfig::default()).map_err(|e| e.to_string())?;
    let got: Vec<(&str, Option<&str>)> = results.iter().map(|r| (r.item_id.as_str(), r.label.as_deref())).collect();
    ensure!(got == [("a#0", Some("Joyful")), ("b#0", None), ("c#0", Some("Angry"))], "votes resolved as {got:?}");
    ensure!(summary.items == 3 && summary.resolved == 2, "summary {summary:?}");

    // The rendered summary agrees with the per-item results.
    let mini = mini_run();
    let results: Vec<AggregationResult> = std::fs::read_to_string(mini.aggregate.join("results.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let resolved = results.iter().filter(|r| r.label.is_some()).count();
    let txt = std::fs::read_to_string(mini.aggregate.join("summary.txt")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = txt.lines().collect();
    ensure!(rows.len() == 5, "summary has {} rows", rows.len());
    ensure!(rows[0].starts_with("Total no. of dialogues") && rows[0].ends_with(&format!(" {}", results.len())), "row 1: {}", rows[0]);
    let coverage = format!("{resolved} ({:.2}%)", 100.0 * resolved as f64 / results.len() as f64);
    ensure!(rows[1].starts_with("No. of dialogues labeled with majority vote") && rows[1].ends_with(&coverage), "row 2: {} vs {coverage}", rows[1]);
    let minutes = Regex::new(r"^Avg\. time taken per HIT\s+\d+\.\d{2} min\.$").unwrap();
    ensure!(minutes.is_match(rows[2]), "row 3: {}", rows[2]);
    ensure!(rows[3].starts_with("% of times workers got 3/5 quiz questions correct") && rows[3].ends_with('%'), "row 4: {}", rows[3]);
    ensure!(rows.iter().all(|r| r.chars().count() == 68), "rows are not aligned");

    let claims = parallel_claims(100, 20, 3)?;
    Ok(format!("AAB/ABC/CCC resolve as expected; mini summary matches {} results; {claims}", results.len()))
}

fn parallel_claims(clients: usize, hits: usize, workers: usize) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Arc::new(AnnotationStore::create(dir.path(), common::sample_hits(hits, workers), LabelTaxonomy::default()).map_err(|e| e.to_string())?);
    store.set_sync(false).map_err(|e| e.to_string())?;
    let base = common::spawn_router(router(store.clone(), None));
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let barrier = std::sync::Barrier::new(clients);
    let claims: Vec<(String, Option<String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..clients)
            .map(|i| {
                let (agent, barrier, base) = (&agent, &barrier, &base);
                s.spawn(move || {
                    let worker = format!("w{i:03}");
                    barrier.wait();
                    let mut r = agent.get(format!("{base}/hits/next?worker={worker}")).call().unwrap();
                    let hit = (r.status().as_u16() == 200).then(|| r.body_mut().read_json::<Value>().unwrap()["hit_id"].as_str().unwrap().to_string());
                    (worker, hit)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut per_hit: BTreeMap<String, HashSet<String>> = BTreeMap::new();
    for (w, h) in &claims {
        if let Some(h) = h {
            ensure!(per_hit.entry(h.clone()).or_default().insert(w.clone()), "{w} got {h} twice");
        }
    }
    let granted = claims.iter().filter(|c| c.1.is_some()).count();
    ensure!(granted == hits * workers, "{granted} claims granted for {} slots", hits * workers);
    ensure!(per_hit.len() == hits && per_hit.values().all(|ws| ws.len() == workers), "uneven assignment");
    for h in &store.progress().hits {
        let assigned: HashSet<String> = h.assigned.iter().cloned().collect();
        ensure!(assigned == per_hit[&h.hit_id], "server view of {} differs from the clients", h.hit_id);
    }
    Ok(format!("{clients} parallel clients filled {granted} slots with no double assignment"))
}

struct MiniRun {
    _dir: tempfile::TempDir,
    train: PathBuf,
    aggregate: PathBuf,
    corpus: PathBuf,
    flows: PathBuf,
}

fn run_into(dir: tempfile::TempDir) -> MiniRun {
    let p: Pipeline = common::run_mini(dir.path());
    MiniRun {
        train: p.stage_dir(Stage::Train),
        aggregate: p.stage_dir(Stage::Aggregate),
        corpus: p.stage_dir(Stage::SelfLabel).join("corpus.jsonl"),
        flows: p.stage_dir(Stage::ExportFlows),
        _dir: dir,
    }
}

fn mini_run() -> &'static MiniRun {
    static RUN: OnceLock<MiniRun> = OnceLock::new();
    RUN.get_or_init(|| run_into(tempfile::tempdir().unwrap()))
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn analytics() -> Outcome {
    let mini = mini_run();
    let tax = LabelTaxonomy::default();
    let corpus: Vec<LabeledDialogue> = std::fs::read_to_string(&mini.corpus)
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str::<CorpusLine>(l).unwrap().labeled())
        .collect();
    ensure!(!corpus.is_empty(), "self-labeled corpus is empty");
    ensure!(corpus.iter().all(|d| d.labels.iter().all(Option::is_some)), "corpus has unlabeled turns");
    let turns: u64 = corpus.iter().map(|d| d.labels.len() as u64).sum();
    let pairs: u64 = corpus.iter().map(|d| d.labels.len().saturating_sub(1) as u64).sum();
    let dist = label_distribution(&corpus, &tax).map_err(|e| e.to_string())?;
    ensure!(dist.total == turns && dist.rows.iter().map(|r| r.count).sum::<u64>() == turns, "distribution total {} for {turns} turns", dist.total);
    let trans = transition_matrix(&corpus, &tax).map_err(|e| e.to_string())?;
    ensure!(trans.total() == pairs, "transition total {} for {pairs} adjacent pairs", trans.total());

    let six = [LabeledDialogue::new("six", ["Joyful", "Sad", "Angry", "Sad", "Joyful", "Afraid"])];
    let g = flow_paths(&six, &tax, "Joyful", 4).map_err(|e| e.to_string())?;
    ensure!(g.dialogues == 1, "six-turn dialogue not counted");
    ensure!(g.nodes.keys().all(|n| n.position <= 4) && g.nodes.values().sum::<u64>() == 4, "depth cap broken: {:?}", g.nodes);
    ensure!(g.edges.values().sum::<u64>() == 3, "expected 3 edges within depth 4");

    let cfg = common::mini_config(Path::new("/unused"), &[]);
    let a = &cfg.analytics;
    let files = read_dir_bytes(&mini.flows);
    for root in &a.roots {
        let build = || {
            let g = flow_paths(&corpus, &tax, root, a.max_depth).unwrap();
            if a.top_n > 0 {
                g.truncate_layers(a.top_n)
            } else {
                g
            }
        };
        let full = flow_paths(&corpus, &tax, root, a.max_depth).map_err(|e| e.to_string())?;
        let first_layer: u64 = full.nodes.iter().filter(|(n, _)| n.position == 1).map(|(_, c)| c).sum();
        ensure!(first_layer == full.dialogues as u64, "{root}: first layer holds {first_layer} of {} dialogues", full.dialogues);
        for p in 2..=a.max_depth {
            let inflow: u64 = full.edges.iter().filter(|((_, b), _)| b.position == p).map(|(_, c)| c).sum();
            let layer: u64 = full.nodes.iter().filter(|(n, _)| n.position == p).map(|(_, c)| c).sum();
            ensure!(inflow == layer, "{root}: layer {p} holds {layer} but receives {inflow}");
        }
        let stem = root.to_lowercase();
        for (ext, fmt) in [("sankey.tsv", FlowFormat::SankeyRecords), ("dot", FlowFormat::Dot)] {
            let (x, y) = (export_flow(&build(), fmt), export_flow(&build(), fmt));
            ensure!(x == y, "{root} {ext} export differs between calls");
            ensure!(files.get(&format!("{stem}.{ext}")).map(Vec::as_slice) == Some(x.as_bytes()), "{stem}.{ext} differs from the pipeline output");
        }
    }
    let second = run_into(tempfile::tempdir().map_err(|e| e.to_string())?);
    ensure!(read_dir_bytes(&second.flows) == files, "flow exports differ between two runs");
    Ok(format!("{} dialogues, {turns} turns, {pairs} transitions; {} export files byte-identical across runs", corpus.len(), files.len()))
}

fn throughput() -> Outcome {
    const PIPELINE_LIMIT: Duration = Duration::from_secs(600);
    const SEARCH_LIMIT: Duration = Duration::from_secs(120);
    let corpus = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = generate_corpus(corpus.path(), &SynthConfig::with_turns(100_000)).map_err(|e| e.to_string())?;
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut p = Pipeline::open(common::mini_config(work.path(), &[&format!("paths.corpus={}", corpus.path().display())])).map_err(|e| e.to_string())?;
    let t = Instant::now();
    p.run_all(false).map_err(|e| e.to_string())?;
    let pipeline_time = t.elapsed();
    drop(p);

    let (n_unl, n_lab, dim) = (50_000, 5_000, 768);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rows = |n: usize, prefix: &str| {
        let data: Vec<Vec<f32>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect()).collect();
        EmbeddingSet::from_rows((0..n).map(|i| format!("{prefix}{i:05}")).collect(), &data, dim).unwrap()
    };
    let labeled = LabeledSet { set: rows(n_lab, "l"), labels: (0..n_lab).map(|i| format!("c{}", i % 41)).collect() };
    let unlabeled = rows(n_unl, "u");
    // Random 768-d cosines spread about 0.036, so this keeps only the upper tail.
    let tau = 0.13;
    let t = Instant::now();
    let matches = expand_by_similarity(&labeled, &unlabeled, None, tau, &SearchOptions::default()).map_err(|e| e.to_string())?;
    let search_time = t.elapsed();
    let sample: Vec<usize> = (0..1000).collect();
    let naive = expand_naive(&labeled, &unlabeled.select(&sample), None, tau).map_err(|e| e.to_string())?;
    let ids: HashSet<&str> = naive.iter().map(|m| m.unlabeled_id.as_str()).collect();
    let sub: Vec<&SimilarityMatch> = matches.iter().filter(|m| m.unlabeled_id.as_str() < "u01000").collect();
    ensure!(sub.len() == naive.len() && sub.iter().zip(&naive).all(|(a, b)| *a == b), "blocked search disagrees with the naive loop on the sample");
    ensure!(!ids.is_empty(), "threshold left the sample empty");

    let detail = format!(
        "{} turns through the pipeline in {:.1}s; {n_unl}x{n_lab} D={dim} search in {:.1}s ({} matches), sample agrees; {} core(s)",
        summary.turns,
        pipeline_time.as_secs_f64(),
        search_time.as_secs_f64(),
        matches.len(),
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    ensure!(pipeline_time < PIPELINE_LIMIT, "pipeline too slow: {detail}");
    ensure!(search_time < SEARCH_LIMIT, "search too slow: {detail}");
    Ok(detail)
}
