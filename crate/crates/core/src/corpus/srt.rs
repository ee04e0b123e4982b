use super::{clean_line, parse_timestamp, ParseIssue, ParseOptions, ParseReport, SubtitleBlock, SubtitleDocument};

/// Decodes the handful of HTML entities that appear in subtitle files.
fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&apos;", "'")
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
}

fn parse_timing(line: &str) -> Option<(u64, u64)> {
    let (start, rest) = line.split_once("-->")?;
    // Trailing positional coordinates may follow the end time.
    let end = rest.split_whitespace().next()?;
    Some((parse_timestamp(start)?, parse_timestamp(end)?))
}

fn is_index_line(line: &str) -> bool {
    let t = line.trim();
    !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit())
}

pub(super) fn parse(text: &str, opts: &ParseOptions, report: &mut ParseReport) -> SubtitleDocument {
    let mut blocks: Vec<SubtitleBlock> = Vec::new();
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();

    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let group_start = i;
        while i < lines.len() && !lines[i].trim().is_empty() {
            i += 1;
        }
        let group = &lines[group_start..i];

        let (timing_line, text_lines) = if group[0].contains("-->") {
            (Some(group[0]), &group[1..])
        } else if is_index_line(group[0]) {
            (group.get(1).copied(), group.get(2..).unwrap_or(&[]))
        } else {
            // A text-only group continues the previous cue (blank line inside cue text).
            if let Some(prev) = blocks.last_mut() {
                prev.lines.extend(group.iter().map(|l| clean_line(&decode_entities(l))).filter(|l| !l.is_empty()));
            } else {
                report.issues.push(ParseIssue {
                    line: group_start + 1,
                    message: "text without a cue header".into(),
                });
            }
            continue;
        };

        let Some((start, end)) = timing_line.and_then(parse_timing) else {
            report.issues.push(ParseIssue {
                line: group_start + 1,
                message: format!("malformed timestamp line {:?}", timing_line.unwrap_or("")),
            });
            continue;
        };
        if start > end {
            report.issues.push(ParseIssue {
                line: group_start + 1,
                message: format!("cue ends before it starts ({start} ms > {end} ms)"),
            });
            continue;
        }
        let cleaned: Vec<String> = text_lines
            .iter()
            .map(|l| clean_line(&decode_entities(l)))
            .filter(|l| !l.is_empty())
            .collect();
        if cleaned.is_empty() {
            report.issues.push(ParseIssue {
                line: group_start + 1,
                message: "cue has no text".into(),
            });
            continue;
        }
        blocks.push(SubtitleBlock {
            index: blocks.len() as u32 + 1,
            start_ms: Some(start),
            end_ms: Some(end),
            lines: cleaned,
        });
    }

    SubtitleDocument {
        doc_id: opts.doc_id.clone(),
        genre: None,
        duration_ms: None,
        blocks,
        language: opts.language.clone(),
    }
}

/// Renders blocks as SRT. Blocks without timestamps are written at 0 ms.
pub fn write_srt(doc: &SubtitleDocument) -> String {
    use super::format_timestamp;
    let mut out = String::new();
    for b in &doc.blocks {
        out.push_str(&format!(
            "{}\n{} --> {}\n{}\n\n",
            b.index,
            format_timestamp(b.start_ms.unwrap_or(0)),
            format_timestamp(b.end_ms.unwrap_or(0)),
            b.lines.join("\n")
        ));
    }
    out
}
