//! Write a synthetic subtitle corpus with planted labels.
//!
//! `cargo run --example generate_corpus -- OUT_DIR [TURNS]`

use subtalk::pipeline::synth::{generate_corpus, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("subtalk-corpus").to_string_lossy().into_owned());
    let cfg = match args.next() {
        Some(turns) => SynthConfig::with_turns(turns.parse()?),
        None => SynthConfig::mini(),
    };
    let s = generate_corpus(out.as_ref(), &cfg)?;
    println!("{} files, {} dialogues, {} turns ({} noise) -> {out}", s.files, s.dialogues, s.turns, s.noise_turns);
    Ok(())
}
