//! Split timed turns into dialogues on long pauses, then apply the
//! cleaning rules and print what each rule removed.

use subtalk::dialogue::{clean_dialogues, split_dialogues, CleaningConfig, Turn};

fn main() {
    let lines: [(&str, u64); 9] = [
        ("Previously on Harbor Street...", 0),
        ("Where is the car?", 9_000),
        ("KATE: I parked it behind the shop.", 10_500),
        ("I parked it behind the shop.", 11_800),
        ("\u{266a} \u{266a}", 13_000),
        ("You never listen to me.", 14_000),
        ("Fine.", 30_000),
        ("We leave at six.", 45_000),
        ("Then we should pack tonight.", 46_200),
    ];
    let turns: Vec<Turn> = lines.iter().map(|(text, at)| Turn::new(*text, Some(*at), Some(at + 1_000), "demo")).collect();
    let dialogues = split_dialogues(&turns, 5_000);
    println!("{} dialogues before cleaning", dialogues.len());

    let (kept, report) = clean_dialogues(&dialogues, &CleaningConfig::default());
    for d in &kept {
        println!("{}:", d.dialogue_id);
        for t in &d.turns {
            println!("  {}", t.text);
        }
    }
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
}
