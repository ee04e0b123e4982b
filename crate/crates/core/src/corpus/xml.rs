//! Minimal timestamped-block XML, shaped after the OpenSubtitles layout:
//!
//! ```text
//! document := <document [id=S] [lang=S] [genre=S] [duration_ms=N]> block* </document>
//! block    := <block [index=N] [start=TS] [end=TS]> line* </block>
//! line     := <line> text </line>
//! TS       := HH:MM:SS,mmm
//! ```
//!
//! Missing `start`/`end` attributes mean the timestamp is unknown. Markup
//! nested inside `<line>` contributes only its text.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{
    clean_line, format_timestamp, parse_timestamp, CorpusError, ParseIssue, ParseOptions, ParseReport,
    SubtitleBlock, SubtitleDocument,
};

fn attr(e: &BytesStart<'_>, name: &[u8]) -> Result<Option<String>, CorpusError> {
    for a in e.attributes() {
        let a = a.map_err(|err| CorpusError::Xml(err.to_string()))?;
        if a.key.as_ref() == name {
            let v = a.unescape_value().map_err(|err| CorpusError::Xml(err.to_string()))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

struct PendingBlock {
    line_no: usize,
    timing: Result<(Option<u64>, Option<u64>), String>,
    lines: Vec<String>,
}

fn timing(start: Option<String>, end: Option<String>) -> Result<(Option<u64>, Option<u64>), String> {
    let conv = |v: Option<String>| -> Result<Option<u64>, String> {
        match v {
            None => Ok(None),
            Some(s) => parse_timestamp(&s).map(Some).ok_or(format!("malformed timestamp {s:?}")),
        }
    };
    let (s, e) = (conv(start)?, conv(end)?);
    if let (Some(s), Some(e)) = (s, e) {
        if s > e {
            return Err(format!("cue ends before it starts ({s} ms > {e} ms)"));
        }
    }
    Ok((s, e))
}

pub(super) fn parse(text: &str, opts: &ParseOptions, report: &mut ParseReport) -> Result<SubtitleDocument, CorpusError> {
    let mut doc = SubtitleDocument {
        doc_id: opts.doc_id.clone(),
        genre: None,
        duration_ms: None,
        blocks: Vec::new(),
        language: opts.language.clone(),
    };
    if text.trim().is_empty() {
        return Ok(doc);
    }
    let line_of = |pos: u64| text.as_bytes()[..(pos as usize).min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1;

    let mut reader = Reader::from_str(text);
    let mut seen_root = false;
    let mut block: Option<PendingBlock> = None;
    let mut line_buf: Option<String> = None;

    loop {
        let pos = reader.buffer_position();
        let event = reader.read_event().map_err(|e| CorpusError::Xml(format!("line {}: {e}", line_of(pos))))?;
        match event {
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"document" => {
                seen_root = true;
                if let Some(id) = attr(&e, b"id")? {
                    doc.doc_id = id;
                }
                if let Some(lang) = attr(&e, b"lang")? {
                    doc.language = lang;
                }
                doc.genre = attr(&e, b"genre")?.filter(|g| !g.is_empty());
                doc.duration_ms = match attr(&e, b"duration_ms")? {
                    Some(d) => Some(d.trim().parse().map_err(|_| CorpusError::Xml(format!("bad duration_ms {d:?}")))?),
                    None => None,
                };
            }
            Event::Start(e) if e.name().as_ref() == b"block" => {
                block = Some(PendingBlock {
                    line_no: line_of(pos),
                    timing: timing(attr(&e, b"start")?, attr(&e, b"end")?),
                    lines: Vec::new(),
                });
            }
            Event::Empty(e) if e.name().as_ref() == b"block" => {
                report.issues.push(ParseIssue { line: line_of(pos), message: "cue has no text".into() });
            }
            Event::Start(e) if e.name().as_ref() == b"line" => {
                line_buf = Some(String::new());
            }
            Event::Text(t) => {
                if let Some(buf) = line_buf.as_mut() {
                    let s = t.unescape().map_err(|e| CorpusError::Xml(e.to_string()))?;
                    buf.push_str(&s);
                }
            }
            Event::CData(t) => {
                if let Some(buf) = line_buf.as_mut() {
                    buf.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::Start(_) => {
                if let Some(buf) = line_buf.as_mut() {
                    buf.push(' ');
                }
            }
            Event::End(e) if e.name().as_ref() == b"line" => {
                if let (Some(buf), Some(b)) = (line_buf.take(), block.as_mut()) {
                    let cleaned = clean_line(&buf);
                    if !cleaned.is_empty() {
                        b.lines.push(cleaned);
                    }
                }
            }
            Event::End(e) if e.name().as_ref() == b"block" => {
                let Some(b) = block.take() else { continue };
                match b.timing {
                    Err(message) => report.issues.push(ParseIssue { line: b.line_no, message }),
                    Ok(_) if b.lines.is_empty() => {
                        report.issues.push(ParseIssue { line: b.line_no, message: "cue has no text".into() })
                    }
                    Ok((start_ms, end_ms)) => doc.blocks.push(SubtitleBlock {
                        index: doc.blocks.len() as u32 + 1,
                        start_ms,
                        end_ms,
                        lines: b.lines,
                    }),
                }
            }
            Event::End(e) => {
                if let Some(buf) = line_buf.as_mut() {
                    if e.name().as_ref() != b"line" {
                        buf.push(' ');
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !seen_root {
        return Err(CorpusError::Xml("missing <document> root element".into()));
    }
    Ok(doc)
}

fn esc(s: &str) -> std::borrow::Cow<'_, str> {
    quick_xml::escape::escape(s)
}

/// Canonical on-disk form of a document; parsing it back yields the same document.
pub fn to_block_xml(doc: &SubtitleDocument) -> String {
    let mut out = format!("<document id=\"{}\" lang=\"{}\"", esc(&doc.doc_id), esc(&doc.language));
    if let Some(g) = &doc.genre {
        out.push_str(&format!(" genre=\"{}\"", esc(g)));
    }
    if let Some(d) = doc.duration_ms {
        out.push_str(&format!(" duration_ms=\"{d}\""));
    }
    out.push_str(">\n");
    for b in &doc.blocks {
        out.push_str(&format!("  <block index=\"{}\"", b.index));
        if let Some(s) = b.start_ms {
            out.push_str(&format!(" start=\"{}\"", format_timestamp(s)));
        }
        if let Some(e) = b.end_ms {
            out.push_str(&format!(" end=\"{}\"", format_timestamp(e)));
        }
        out.push_str(">\n");
        for l in &b.lines {
            out.push_str(&format!("    <line>{}</line>\n", esc(l)));
        }
        out.push_str("  </block>\n");
    }
    out.push_str("</document>\n");
    out
}
