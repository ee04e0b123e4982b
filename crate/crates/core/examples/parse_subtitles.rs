//! Parse an SRT and a block-XML file, then split blocks into sentences.

use subtalk::corpus::{parse_subtitles, segment_sentences, to_block_xml, AbbreviationList, ParseOptions, SubtitleFormat};

const SRT: &str = "1
00:00:01,000 --> 00:00:03,200
<i>Where were you?</i>
I waited all night.

2
00:00:03,900 --> 00:00:05,000
Dr. Hale kept me late.

3
00:00:06,000 -> 00:00:07,000
A cue with a broken arrow is dropped.

4
00:00:09,000 --> 00:00:10,500
- Fine.
- Really, it's fine.
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let parsed = parse_subtitles(SRT.as_bytes(), SubtitleFormat::Srt, &ParseOptions::new("night"))?;
    let doc = parsed.document;
    println!("{} blocks, {} skipped", doc.blocks.len(), parsed.report.issues.len());
    for issue in &parsed.report.issues {
        println!("  skipped line {}: {}", issue.line, issue.message);
    }
    for s in segment_sentences(&doc, &AbbreviationList::default()) {
        println!("  block {} #{}: {}", s.block_index, s.order_in_block, s.text);
    }

    // Text with no header of its own continues the previous cue.
    let cont = parse_subtitles(b"1\n00:00:01,000 --> 00:00:02,000\nFirst line.\n\nstill the same cue\n", SubtitleFormat::Srt, &ParseOptions::new("c"))?;
    println!("continuation: {:?}", cont.document.blocks[0].lines);

    // The same document as block XML parses back to the same blocks.
    let xml = to_block_xml(&doc);
    let again = parse_subtitles(xml.as_bytes(), SubtitleFormat::BlockXml, &ParseOptions::new("night"))?;
    assert_eq!(again.document.blocks, doc.blocks);
    println!("xml round trip ok ({} bytes)", xml.len());
    Ok(())
}
