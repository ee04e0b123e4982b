use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subtalk::annotation::AnnotationStore;
use subtalk::pipeline::synth::{generate_corpus, SynthConfig};
use subtalk::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage, StageOutcome};

#[derive(Parser)]
#[command(name = "subtalk", version, about = "Curate an emotion and intent labeled dialogue corpus from subtitles")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML). Defaults apply when omitted and ./subtalk.toml is absent.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set readability.top_k=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Rerun even when the manifest says the stage is current.
    #[arg(long, global = true)]
    force: bool,
    /// More log output (-v info, -vv debug).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Parse subtitle files into cues and sentences.
    Ingest,
    /// Train the turn segmenter and split sentences into turns.
    SegmentTurns,
    /// Group turns into dialogues by timestamp gaps.
    BuildDialogues,
    /// Apply the turn filters and drop duplicate dialogues.
    Clean,
    /// Score and rank dialogues for annotation.
    ScoreReadability,
    /// Weakly label every turn.
    Label,
    /// Keep the most emotional dialogues.
    FilterEmotional,
    /// Serve the annotation API (or simulate a crowd when annotation.simulate is set).
    ServeAnnotation,
    /// Majority-vote the crowd answers.
    Aggregate,
    /// Inter-rater agreement over the crowd answers.
    Kappa,
    /// Embed crowd-labeled and unlabeled dialogues.
    Embed,
    /// Label unlabeled dialogues by nearest crowd-labeled neighbor.
    ExpandSimilar,
    /// Train the four classifier stages.
    Train,
    /// Label the emotional corpus with the final model.
    SelfLabel,
    /// Rescore every stage model on the test split.
    Evaluate,
    /// Label distribution and transition matrix.
    Analyze,
    /// Label flows from each root label, as TSV and DOT.
    ExportFlows,
    /// Dialogue, turn and token counts per corpus version.
    Stats,
    /// Every stage in order, skipping the ones that are current.
    Run {
        /// Stop after this stage.
        #[arg(long)]
        until: Option<Stage>,
    },
    /// Dump the annotation records collected so far as JSON lines.
    ExportRecords {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print the effective config as TOML.
    ShowConfig,
    /// Write a synthetic subtitle corpus with planted labels.
    GenerateCorpus {
        #[arg(long, short)]
        out: PathBuf,
        /// Approximate number of turns; the bundled fixture size when omitted.
        #[arg(long)]
        turns: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Ingest => Stage::Ingest,
            Command::SegmentTurns => Stage::SegmentTurns,
            Command::BuildDialogues => Stage::BuildDialogues,
            Command::Clean => Stage::Clean,
            Command::ScoreReadability => Stage::ScoreReadability,
            Command::Label => Stage::Label,
            Command::FilterEmotional => Stage::FilterEmotional,
            Command::ServeAnnotation => Stage::ServeAnnotation,
            Command::Aggregate => Stage::Aggregate,
            Command::Kappa => Stage::Kappa,
            Command::Embed => Stage::Embed,
            Command::ExpandSimilar => Stage::ExpandSimilar,
            Command::Train => Stage::Train,
            Command::SelfLabel => Stage::SelfLabel,
            Command::Evaluate => Stage::Evaluate,
            Command::Analyze => Stage::Analyze,
            Command::ExportFlows => Stage::ExportFlows,
            Command::Stats => Stage::Stats,
            _ => return None,
        })
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig, PipelineError> {
    match &g.config {
        Some(p) => PipelineConfig::load(p, &g.overrides),
        None if Path::new("subtalk.toml").exists() => PipelineConfig::load(Path::new("subtalk.toml"), &g.overrides),
        None => PipelineConfig::from_toml_with("", &g.overrides),
    }
}

/// Human-readable report a stage leaves behind, if any.
fn report_file(stage: Stage) -> Option<&'static str> {
    match stage {
        Stage::Aggregate => Some("summary.txt"),
        Stage::Kappa => Some("kappa.json"),
        Stage::Train | Stage::Evaluate => Some("report.txt"),
        Stage::Stats => Some("stats.txt"),
        Stage::Analyze => Some("distribution.tsv"),
        _ => None,
    }
}

fn print_outcome(p: &Pipeline, stage: Stage, o: &StageOutcome, show_report: bool) {
    let status = if o.skipped { "up to date" } else { "done" };
    eprintln!("{:<18} {status:<10} {:>8} ms  {} outputs", o.stage, o.elapsed_ms, o.outputs.len());
    if show_report {
        if let Some(text) = report_file(stage).and_then(|f| std::fs::read_to_string(p.stage_dir(stage).join(f)).ok()) {
            print!("{text}");
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let g = &cli.global;
    match &cli.command {
        Command::GenerateCorpus { out, turns, seed } => {
            let mut cfg = turns.map_or_else(SynthConfig::mini, SynthConfig::with_turns);
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            let s = generate_corpus(out, &cfg)?;
            println!("{} files, {} dialogues, {} turns ({} noise) in {}", s.files, s.dialogues, s.turns, s.noise_turns, out.display());
            return Ok(());
        }
        Command::ShowConfig => {
            print!("{}", load_config(g)?.to_toml());
            return Ok(());
        }
        _ => {}
    }

    let mut p = Pipeline::open(load_config(g)?)?;
    match &cli.command {
        Command::Run { until } => {
            for stage in Stage::ALL {
                let o = p.run(stage, g.force)?;
                print_outcome(&p, stage, &o, false);
                if Some(stage) == *until {
                    break;
                }
            }
        }
        Command::ExportRecords { out } => {
            let dir = p.stage_dir(Stage::ServeAnnotation).join("store");
            if !dir.join("hits.json").exists() {
                return Err(PipelineError::Prerequisite { stage: "export-records", missing: dir.join("hits.json"), run_first: Stage::ServeAnnotation.name() });
            }
            let store = AnnotationStore::open(&dir, p.taxonomy().clone()).map_err(|e| PipelineError::Runtime(e.to_string()))?;
            let mut w: Box<dyn Write> = match out {
                Some(path) => Box::new(std::io::BufWriter::new(std::fs::File::create(path)?)),
                None => Box::new(std::io::stdout().lock()),
            };
            for r in store.records() {
                serde_json::to_writer(&mut w, &r).map_err(|e| PipelineError::Runtime(e.to_string()))?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        cmd => {
            let stage = cmd.stage().expect("stage command");
            let o = p.run(stage, g.force)?;
            print_outcome(&p, stage, &o, true);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
