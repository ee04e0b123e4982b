//! Subtitle ingestion: parsing SRT and block-XML files into timestamped
//! blocks, splitting blocks into sentences, and deriving the per-document
//! sentence density used by the turn segmenter.

mod metadata;
mod sentences;
mod srt;
mod xml;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metadata::{load_metadata, parse_metadata, DocMetadata};
pub use sentences::{segment_sentences, AbbreviationList, SentenceRecord};
pub use srt::write_srt;
pub use xml::to_block_xml;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("input is not valid UTF-8 (byte offset {0}); enable lossy decoding to replace invalid sequences")]
    InvalidUtf8(usize),
    #[error("malformed block XML: {0}")]
    Xml(String),
    #[error("metadata line {line}: {message}")]
    Metadata { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtitleFormat {
    Srt,
    BlockXml,
}

impl SubtitleFormat {
    /// Picks the format from a file extension (`srt` or `xml`).
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "srt" => Some(Self::Srt),
            "xml" => Some(Self::BlockXml),
            _ => None,
        }
    }
}

/// One timing cue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleBlock {
    /// 1-based position among the successfully parsed blocks.
    pub index: u32,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub lines: Vec<String>,
}

impl SubtitleBlock {
    /// Block text with lines separated by newlines.
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleDocument {
    pub doc_id: String,
    pub genre: Option<String>,
    pub duration_ms: Option<u64>,
    pub blocks: Vec<SubtitleBlock>,
    pub language: String,
}

impl SubtitleDocument {
    pub fn last_end_ms(&self) -> Option<u64> {
        self.blocks.iter().filter_map(|b| b.end_ms).max()
    }

    /// Known duration, falling back to the last cue's end time.
    pub fn effective_duration_ms(&self) -> Option<u64> {
        self.duration_ms.or_else(|| self.last_end_ms())
    }

    /// Fills genre and duration from sidecar metadata when the file lacks them.
    pub fn apply_metadata(&mut self, meta: &DocMetadata) {
        if self.genre.is_none() {
            self.genre = meta.genre.clone();
        }
        if self.duration_ms.is_none() {
            self.duration_ms = meta.duration_ms;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub block_index: u32,
    pub order_in_block: u32,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
}

/// A recoverable, block-level parse failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    /// 1-based line number in the decoded input where the block starts.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub issues: Vec<ParseIssue>,
    pub lossy_decoded: bool,
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub doc_id: String,
    pub language: String,
    pub lossy_utf8: bool,
}

impl ParseOptions {
    pub fn new(doc_id: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            language: "en".to_string(),
            lossy_utf8: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub document: SubtitleDocument,
    pub report: ParseReport,
}

/// Parses raw subtitle bytes.
///
/// Blocks with malformed or inverted timestamps are skipped and recorded in
/// the returned report; an empty input yields a document with no blocks.
/// Formatting markup (`<i>`, `{\an8}`) is stripped from cue text.
pub fn parse_subtitles(
    raw: &[u8],
    format: SubtitleFormat,
    opts: &ParseOptions,
) -> Result<Parsed, CorpusError> {
    let mut report = ParseReport::default();
    let text = match std::str::from_utf8(raw) {
        Ok(s) => std::borrow::Cow::Borrowed(s),
        Err(e) if !opts.lossy_utf8 => return Err(CorpusError::InvalidUtf8(e.valid_up_to())),
        Err(_) => {
            report.lossy_decoded = true;
            String::from_utf8_lossy(raw)
        }
    };
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let document = match format {
        SubtitleFormat::Srt => srt::parse(text, opts, &mut report),
        SubtitleFormat::BlockXml => xml::parse(text, opts, &mut report)?,
    };
    Ok(Parsed { document, report })
}

/// Sentences per second of subtitle duration.
///
/// `None` is the missing-feature sentinel: the duration is neither recorded
/// nor derivable from the last cue. A document without sentences has
/// density zero.
pub fn sentence_density(doc: &SubtitleDocument, sentence_count: usize) -> Option<f64> {
    if sentence_count == 0 {
        return Some(0.0);
    }
    match doc.effective_duration_ms() {
        Some(ms) if ms > 0 => Some(sentence_count as f64 / (ms as f64 / 1000.0)),
        _ => None,
    }
}

/// Parses `HH:MM:SS,mmm` (comma or period before the milliseconds).
pub(crate) fn parse_timestamp(s: &str) -> Option<u64> {
    let s = s.trim();
    let (hms, frac) = s.split_once([',', '.'])?;
    let mut parts = hms.split(':');
    let h: u64 = parts.next()?.trim().parse().ok()?;
    let m: u64 = parts.next()?.parse().ok()?;
    let sec: u64 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || m >= 60 || sec >= 60 {
        return None;
    }
    if frac.is_empty() || frac.len() > 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let ms: u64 = format!("{frac:0<3}").parse().ok()?;
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

pub(crate) fn format_timestamp(ms: u64) -> String {
    let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    format!("{h:02}:{m:02}:{:02},{:03}", rem / 1000, rem % 1000)
}

/// Removes markup tags and collapses whitespace.
pub(crate) fn clean_line(line: &str) -> String {
    use std::sync::OnceLock;
    static TAGS: OnceLock<regex::Regex> = OnceLock::new();
    let tags = TAGS.get_or_init(|| regex::Regex::new(r"<[^<>]*>|\{[^{}]*\}").unwrap());
    // Stripping can expose new tags ("<<i>b>"), so repeat until stable.
    let mut cur = line.to_string();
    loop {
        let next = tags.replace_all(&cur, " ").into_owned();
        if next == cur {
            return crate::text::normalize_space(&cur);
        }
        cur = next;
    }
}
