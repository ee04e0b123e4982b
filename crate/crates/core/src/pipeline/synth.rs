//! Synthetic subtitle corpus with labels planted by construction.
//!
//! Every planted turn carries one cue word from [`CUES`] for its label, so a
//! lexicon lookup recovers the truth. Labels within a dialogue follow a small
//! Markov chain (emotions tend to draw intents of matching valence). Noise
//! that the cleaning rules target is mixed in: recap openers, music lines,
//! speaker prefixes, over-long and repeated turns, single-turn dialogues.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{to_block_xml, write_srt, SubtitleBlock, SubtitleDocument};
use crate::segment::{BoundaryLabel, BoundaryRecord};

/// Cue words per label. Every word is unique across labels.
pub const CUES: &[(&str, &[&str])] = &[
    ("Surprised", &["wow", "unbelievable", "whoa"]),
    ("Excited", &["thrilled", "pumped", "stoked"]),
    ("Annoyed", &["irritating", "ugh", "bugging"]),
    ("Proud", &["proud", "accomplished", "medal"]),
    ("Angry", &["angry", "mad", "outraged"]),
    ("Sad", &["sad", "tears", "gloomy"]),
    ("Grateful", &["grateful", "thankful", "appreciate"]),
    ("Lonely", &["lonely", "alone", "nobody"]),
    ("Afraid", &["afraid", "scared", "frightened"]),
    ("Terrified", &["terrified", "horror", "petrified"]),
    ("Guilty", &["guilty", "fault", "blame"]),
    ("Impressed", &["impressive", "amazing", "brilliant"]),
    ("Disgusted", &["gross", "disgusting", "nasty"]),
    ("Hopeful", &["hope", "hopefully", "someday"]),
    ("Confident", &["confident", "certain", "definitely"]),
    ("Furious", &["furious", "livid", "rage"]),
    ("Anxious", &["anxious", "nervous", "worried"]),
    ("Anticipating", &["anticipate", "soon", "countdown"]),
    ("Joyful", &["happy", "joy", "wonderful"]),
    ("Nostalgic", &["remember", "childhood", "memories"]),
    ("Disappointed", &["disappointed", "letdown", "pity"]),
    ("Prepared", &["ready", "prepared", "packed"]),
    ("Jealous", &["jealous", "envy", "envious"]),
    ("Content", &["content", "peaceful", "cozy"]),
    ("Devastated", &["devastated", "ruined", "crushed"]),
    ("Embarrassed", &["embarrassed", "awkward", "blushing"]),
    ("Caring", &["care", "caring", "cherish"]),
    ("Sentimental", &["sentimental", "keepsake", "touching"]),
    ("Trusting", &["trust", "rely", "believe"]),
    ("Ashamed", &["ashamed", "shame", "disgrace"]),
    ("Apprehensive", &["apprehensive", "uneasy", "hesitant"]),
    ("Faithful", &["faithful", "loyal", "devoted"]),
    ("Questioning", &["why", "wonder", "curious"]),
    ("Agreeing", &["agree", "exactly", "absolutely"]),
    ("Acknowledging", &["okay", "understood", "noted"]),
    ("Sympathizing", &["sympathy", "sorry", "condolences"]),
    ("Encouraging", &["courage", "persevere", "onward"]),
    ("Consoling", &["console", "hush", "comfort"]),
    ("Suggesting", &["suggest", "maybe", "should"]),
    ("Wishing", &["wish", "luck", "blessings"]),
    ("Neutral", &["weather", "bus", "schedule"]),
];

const POSITIVE: &[&str] = &[
    "Surprised", "Excited", "Proud", "Grateful", "Impressed", "Hopeful", "Confident", "Anticipating", "Joyful", "Nostalgic", "Prepared", "Content",
    "Caring", "Sentimental", "Trusting", "Faithful",
];
const NEGATIVE: &[&str] = &[
    "Annoyed", "Angry", "Sad", "Lonely", "Afraid", "Terrified", "Guilty", "Disgusted", "Furious", "Anxious", "Disappointed", "Jealous", "Devastated",
    "Embarrassed", "Ashamed", "Apprehensive",
];
const INTENTS: &[&str] = &["Questioning", "Agreeing", "Acknowledging", "Sympathizing", "Encouraging", "Consoling", "Suggesting", "Wishing", "Neutral"];
const AFTER_POSITIVE: &[&str] = &["Acknowledging", "Agreeing", "Questioning", "Wishing", "Encouraging"];
const AFTER_NEGATIVE: &[&str] = &["Sympathizing", "Consoling", "Questioning", "Suggesting", "Encouraging"];
const ROOTS: &[&str] = &["Joyful", "Surprised", "Sad", "Angry"];

const CLAUSES: &[&str] = &[
    "that was the last train",
    "she left the keys at home",
    "the lights went out again",
    "we talked about it yesterday",
    "he called this morning",
    "the letter came today",
    "they moved the meeting",
    "it happened at the station",
    "the car broke down",
    "you found the old photos",
    "the kids are asleep",
    "my sister sold the house",
    "the shop closes at six",
    "your father is downstairs",
    "the money is gone",
    "the phone kept ringing",
    "we lost the game",
    "the door was open",
    "he fixed the roof",
    "she got the job",
];
const CONNECTORS: &[&str] = &["And", "But", "So", "Still,"];
const NAMES: &[&str] = &["MARY", "JOHN", "ALEX", "SAM", "NORA"];
const SHOWS: &[&str] = &["Harbor Street", "The Long Night", "Cold Case Unit", "Westfield"];
const GENRES: &[&str] = &["Drama", "Comedy", "Crime", "Romance"];

pub fn cues_for(label: &str) -> Option<&'static [&'static str]> {
    CUES.iter().find(|(l, _)| *l == label).map(|(_, c)| *c)
}

/// Generator knobs. [`SynthConfig::mini`] is the bundled fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub files: usize,
    pub dialogues_per_file: usize,
    pub seed: u64,
    pub noise: bool,
    /// Every n-th file is written as block XML instead of SRT (0 = never).
    pub xml_every: usize,
    pub boundary_dialogues: usize,
    pub seed_examples_per_label: usize,
    pub quizzes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::mini()
    }
}

impl SynthConfig {
    pub fn mini() -> Self {
        Self { files: 40, dialogues_per_file: 9, seed: 2024, noise: true, xml_every: 4, boundary_dialogues: 400, seed_examples_per_label: 30, quizzes: 40 }
    }

    /// Roughly `turns` turns, for throughput runs.
    pub fn with_turns(turns: usize) -> Self {
        let per_file = 100;
        let files = turns.div_ceil(per_file * 4).max(1);
        Self { files, dialogues_per_file: per_file, ..Self::mini() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub files: usize,
    pub dialogues: usize,
    pub turns: usize,
    pub noise_turns: usize,
}

/// A planted turn: `label` is None for injected noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTurn {
    pub text: String,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDialogue {
    pub doc_id: String,
    pub turns: Vec<TruthTurn>,
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn pick<'a>(&mut self, xs: &'a [&'a str]) -> &'a str {
        xs.choose(&mut self.rng).unwrap()
    }

    fn any_label(&mut self) -> &'static str {
        CUES[self.rng.random_range(0..CUES.len())].0
    }

    fn first_label(&mut self) -> &'static str {
        if self.rng.random_bool(0.5) {
            self.pick(ROOTS)
        } else if self.rng.random_bool(0.5) {
            self.pick(POSITIVE)
        } else {
            self.pick(NEGATIVE)
        }
    }

    fn next_label(&mut self, prev: &str) -> &'static str {
        let r: f64 = self.rng.random();
        let positive = POSITIVE.contains(&prev);
        if POSITIVE.contains(&prev) || NEGATIVE.contains(&prev) {
            let (intents, same) = if positive { (AFTER_POSITIVE, POSITIVE) } else { (AFTER_NEGATIVE, NEGATIVE) };
            if r < 0.55 {
                self.pick(intents)
            } else if r < 0.8 {
                self.pick(same)
            } else {
                self.any_label()
            }
        } else if r < 0.5 {
            if self.rng.random_bool(0.5) {
                self.pick(POSITIVE)
            } else {
                self.pick(NEGATIVE)
            }
        } else if r < 0.8 {
            self.pick(INTENTS)
        } else {
            self.any_label()
        }
    }

    /// One sentence carrying a cue for `label`.
    fn cue_sentence(&mut self, label: &str) -> String {
        let cue = self.pick(cues_for(label).expect("known label"));
        let clause = self.pick(CLAUSES);
        let end = if label == "Questioning" { "?" } else { "." };
        match self.rng.random_range(0..3) {
            0 => format!("{}, {clause}{end}", capitalize(cue)),
            1 => format!("{}, {cue}{end}", capitalize(clause)),
            _ => format!("I think {clause}, {cue}{end}"),
        }
    }

    fn continuation(&mut self) -> String {
        format!("{} {}.", self.pick(CONNECTORS), self.pick(CLAUSES))
    }

    fn labels(&mut self, n: usize) -> Vec<&'static str> {
        let mut out = vec![self.first_label()];
        while out.len() < n {
            let l = self.next_label(out.last().unwrap());
            out.push(l);
        }
        out
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// A turn as laid out on screen: one or two blocks of sentences.
struct PlannedTurn {
    blocks: Vec<Vec<String>>,
    label: Option<String>,
}

impl PlannedTurn {
    fn text(&self) -> String {
        self.blocks.iter().flatten().cloned().collect::<Vec<_>>().join(" ")
    }
}

fn plan_dialogue(g: &mut Gen, noise: bool) -> Vec<PlannedTurn> {
    let n = if noise && g.rng.random_bool(0.08) { 1 } else { g.rng.random_range(2..=6) };
    let mut turns = Vec::new();
    for label in g.labels(n) {
        let mut first = g.cue_sentence(label);
        if noise && g.rng.random_bool(0.08) {
            first = format!("{}: {first}", g.pick(NAMES));
        }
        let blocks = if g.rng.random_bool(0.3) {
            let cont = g.continuation();
            if g.rng.random_bool(0.5) {
                vec![vec![first], vec![cont]]
            } else {
                vec![vec![first, cont]]
            }
        } else {
            vec![vec![first]]
        };
        turns.push(PlannedTurn { blocks, label: Some(label.to_string()) });
        if noise {
            let r: f64 = g.rng.random();
            if r < 0.03 {
                let dup = PlannedTurn { blocks: turns.last().unwrap().blocks.clone(), label: None };
                turns.push(dup);
            } else if r < 0.06 {
                turns.push(PlannedTurn { blocks: vec![vec!["\u{266a} \u{266a} \u{266a}".into()]], label: None });
            } else if r < 0.08 {
                let long = (0..4).map(|_| format!("{} {}.", capitalize(g.pick(CLAUSES)), g.pick(CLAUSES))).collect::<Vec<_>>().join(" ");
                turns.push(PlannedTurn { blocks: vec![vec![long]], label: None });
            }
        }
    }
    turns
}

/// Lays dialogues out on a timeline. Turns inside a dialogue are at most
/// 2.5 s apart, dialogues at least 6 s apart.
fn layout(g: &mut Gen, doc_id: &str, genre: &str, opener: Option<String>, dialogues: &[Vec<PlannedTurn>]) -> (SubtitleDocument, Vec<BoundaryRecord>) {
    let mut blocks = Vec::new();
    let mut bounds = Vec::new();
    let mut t = g.rng.random_range(1_000..5_000u64);
    let push = |blocks: &mut Vec<SubtitleBlock>, t: &mut u64, lines: &[String]| {
        let chars: usize = lines.iter().map(|l| l.len()).sum();
        let dur = 800 + 45 * chars as u64;
        blocks.push(SubtitleBlock { index: blocks.len() as u32 + 1, start_ms: Some(*t), end_ms: Some(*t + dur), lines: lines.to_vec() });
        *t += dur;
    };
    if let Some(o) = opener {
        push(&mut blocks, &mut t, &[o]);
        t += g.rng.random_range(6_000..12_000);
    }
    let mut prev: Option<String> = None;
    for d in dialogues {
        for (ti, turn) in d.iter().enumerate() {
            if ti > 0 {
                t += g.rng.random_range(200..2_500);
            }
            for (bi, lines) in turn.blocks.iter().enumerate() {
                if bi > 0 {
                    t += 150;
                }
                for (si, s) in lines.iter().enumerate() {
                    if let Some(a) = &prev {
                        let same_turn = bi > 0 || si > 0;
                        bounds.push(BoundaryRecord {
                            text_a: a.clone(),
                            text_b: s.clone(),
                            same_block: si > 0,
                            genre: Some(genre.to_string()),
                            density: None,
                            label: if same_turn { BoundaryLabel::SameTurn } else { BoundaryLabel::NewTurn },
                        });
                    }
                    prev = Some(s.clone());
                }
                push(&mut blocks, &mut t, lines);
            }
        }
        t += g.rng.random_range(6_000..20_000);
    }
    let doc = SubtitleDocument { doc_id: doc_id.to_string(), genre: Some(genre.to_string()), duration_ms: None, blocks, language: "en".into() };
    (doc, bounds)
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).map_err(io::Error::other)?);
        s.push('\n');
    }
    std::fs::write(path, s)
}

/// Writes subtitle files plus `metadata.tsv`, `boundaries.jsonl`,
/// `weak_seed.jsonl`, `quiz_bank.jsonl`, `lexicon.tsv` and `truth.jsonl`.
pub fn generate_corpus(dir: &Path, cfg: &SynthConfig) -> io::Result<SynthSummary> {
    std::fs::create_dir_all(dir)?;
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(cfg.seed) };
    let mut summary = SynthSummary { files: cfg.files, ..Default::default() };
    let mut truth = Vec::new();
    let mut metadata = String::from("doc_id\tgenre\tduration_ms\n");
    let width = cfg.files.to_string().len().max(3);

    for f in 0..cfg.files {
        let doc_id = format!("ep{:0width$}", f + 1);
        let genre = g.pick(GENRES);
        let opener = (cfg.noise && g.rng.random_bool(0.3)).then(|| format!("Previously on {}...", g.pick(SHOWS)));
        let dialogues: Vec<Vec<PlannedTurn>> = (0..cfg.dialogues_per_file).map(|_| plan_dialogue(&mut g, cfg.noise)).collect();
        let (doc, _) = layout(&mut g, &doc_id, genre, opener, &dialogues);
        for d in &dialogues {
            summary.dialogues += 1;
            summary.turns += d.len();
            summary.noise_turns += d.iter().filter(|t| t.label.is_none()).count();
            truth.push(TruthDialogue { doc_id: doc_id.clone(), turns: d.iter().map(|t| TruthTurn { text: t.text(), label: t.label.clone() }).collect() });
        }
        let (name, body) = if cfg.xml_every > 0 && (f + 1) % cfg.xml_every == 0 { (format!("{doc_id}.xml"), to_block_xml(&doc)) } else { (format!("{doc_id}.srt"), write_srt(&doc)) };
        std::fs::write(dir.join(name), body)?;
        // Leave some durations for the parser to derive.
        let duration = if f % 3 == 0 { String::new() } else { (doc.last_end_ms().unwrap_or(0) + 30_000).to_string() };
        writeln!(metadata, "{doc_id}\t{genre}\t{duration}").unwrap();
    }
    std::fs::write(dir.join("metadata.tsv"), metadata)?;
    write_lines(&dir.join("truth.jsonl"), &truth)?;

    let mut bg = Gen { rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb0b0) };
    let planned: Vec<Vec<PlannedTurn>> = (0..cfg.boundary_dialogues).map(|_| plan_dialogue(&mut bg, false)).collect();
    let mut bounds = Vec::new();
    for chunk in planned.chunks(20) {
        let genre = bg.pick(GENRES);
        bounds.extend(layout(&mut bg, "train", genre, None, chunk).1);
    }
    write_lines(&dir.join("boundaries.jsonl"), &bounds)?;

    let mut seed = Vec::new();
    for (label, _) in CUES {
        for _ in 0..cfg.seed_examples_per_label {
            let text = g.cue_sentence(label);
            seed.push(serde_json::json!({ "text": text, "label": label }));
        }
    }
    write_lines(&dir.join("weak_seed.jsonl"), &seed)?;

    let mut quizzes = Vec::new();
    for q in 0..cfg.quizzes {
        let gold = g.any_label();
        let mut suggestions = vec![gold.to_string()];
        while suggestions.len() < 3 {
            let l = g.any_label().to_string();
            if !suggestions.contains(&l) {
                suggestions.push(l);
            }
        }
        let k = g.rng.random_range(0..3);
        suggestions.swap(0, k);
        quizzes.push(serde_json::json!({ "quiz_id": format!("q{:03}", q + 1), "situation": g.cue_sentence(gold), "gold": gold, "suggestions": suggestions }));
    }
    write_lines(&dir.join("quiz_bank.jsonl"), &quizzes)?;

    let mut lex = String::from("# cue word<TAB>label\n");
    for (label, cues) in CUES {
        for c in *cues {
            writeln!(lex, "{c}\t{label}").unwrap();
        }
    }
    std::fs::write(dir.join("lexicon.tsv"), lex)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::simulate::Lexicon;
    use crate::labeling::LabelTaxonomy;

    #[test]
    fn cues_cover_taxonomy_once() {
        let tax = LabelTaxonomy::default();
        assert_eq!(CUES.len(), tax.len());
        let mut seen = std::collections::HashSet::new();
        for (l, cues) in CUES {
            assert!(tax.id(l).is_some(), "{l}");
            for c in *cues {
                assert!(seen.insert(*c), "duplicate cue {c}");
            }
        }
        for l in POSITIVE.iter().chain(NEGATIVE).chain(INTENTS) {
            assert!(cues_for(l).is_some());
        }
        assert_eq!(POSITIVE.len() + NEGATIVE.len() + INTENTS.len(), tax.len());
    }

    #[test]
    fn planted_labels_are_recoverable_and_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { files: 3, dialogues_per_file: 5, boundary_dialogues: 10, seed_examples_per_label: 2, quizzes: 4, ..SynthConfig::mini() };
        let s = generate_corpus(a.path(), &cfg).unwrap();
        generate_corpus(b.path(), &cfg).unwrap();
        assert_eq!(s.dialogues, 15);
        for f in ["ep001.srt", "ep004.xml", "truth.jsonl", "lexicon.tsv", "boundaries.jsonl"].iter().filter(|f| a.path().join(f).exists()) {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
        let lex = Lexicon::load(&a.path().join("lexicon.tsv")).unwrap();
        let truth = std::fs::read_to_string(a.path().join("truth.jsonl")).unwrap();
        for line in truth.lines() {
            let d: TruthDialogue = serde_json::from_str(line).unwrap();
            for t in d.turns.iter().filter(|t| t.label.is_some()) {
                let text = t.text.split_once(": ").filter(|(p, _)| NAMES.contains(p)).map_or(t.text.as_str(), |(_, r)| r);
                assert_eq!(lex.label_of(text), t.label.as_deref(), "{}", t.text);
            }
        }
    }
}
