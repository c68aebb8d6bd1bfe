//! Praat long-format TextGrid reading and writing.

use std::fmt::Write as _;
use std::path::Path;

use super::{AlignmentConfig, Interval, UtteranceAlignment};
use crate::error::{Error, Result};

#[derive(Debug)]
struct Tier {
    name: String,
    class: String,
    line: usize,
    declared: usize,
    intervals: Vec<(usize, Interval)>,
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

struct Ctx<'a> {
    path: &'a str,
}

impl Ctx<'_> {
    fn err(&self, line: usize, tier: Option<&str>, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line,
            tier: tier.map(str::to_string),
            message: message.into(),
        }
    }
}

/// Parse a TextGrid file; the utterance id is the file stem.
pub fn parse_textgrid(path: &Path, cfg: &AlignmentConfig) -> Result<UtteranceAlignment> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = decode(&bytes);
    let utterance_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_textgrid_named(&text, &utterance_id, &path.display().to_string(), cfg)
}

/// Parse TextGrid text held in memory.
pub fn parse_textgrid_str(
    text: &str,
    utterance_id: &str,
    cfg: &AlignmentConfig,
) -> Result<UtteranceAlignment> {
    parse_textgrid_named(text, utterance_id, utterance_id, cfg)
}

// Praat writes UTF-8 or UTF-16 (with BOM) depending on content and settings.
fn decode(bytes: &[u8]) -> String {
    if bytes.len() >= 2 && bytes[0] == 0xFE && bytes[1] == 0xFF {
        let units: Vec<u16> = bytes[2..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        return String::from_utf16_lossy(&units);
    }
    if bytes.len() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xFE {
        let units: Vec<u16> = bytes[2..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        return String::from_utf16_lossy(&units);
    }
    let s = String::from_utf8_lossy(bytes);
    s.strip_prefix('\u{feff}').unwrap_or(&s).to_string()
}

fn parse_textgrid_named(
    text: &str,
    utterance_id: &str,
    path: &str,
    cfg: &AlignmentConfig,
) -> Result<UtteranceAlignment> {
    let ctx = Ctx { path };
    let entries = tokenize(text, &ctx)?;
    let mut it = entries.into_iter().peekable();

    // header
    let ft = it.next().ok_or_else(|| ctx.err(1, None, "empty file"))?;
    if ft.key != "File type" || ft.value != "ooTextFile" {
        return Err(ctx.err(
            ft.line,
            None,
            "malformed header: expected File type = \"ooTextFile\"",
        ));
    }
    let oc = it
        .next()
        .ok_or_else(|| ctx.err(ft.line + 1, None, "malformed header: missing Object class"))?;
    if oc.key != "Object class" || oc.value != "TextGrid" {
        return Err(ctx.err(
            oc.line,
            None,
            "malformed header: expected Object class = \"TextGrid\"",
        ));
    }

    let mut xmin = None;
    let mut xmax = None;
    let mut declared_tiers = None;
    let mut tiers: Vec<Tier> = Vec::new();
    // (start, end, text) of the interval or point currently being filled
    let mut pending: Option<(usize, Option<f64>, Option<f64>, Option<String>)> = None;

    let num = |e: &Entry, tier: Option<&str>| -> Result<f64> {
        e.value.parse::<f64>().map_err(|_| {
            ctx.err(
                e.line,
                tier,
                format!("expected a number for {}, got {:?}", e.key, e.value),
            )
        })
    };

    fn flush(
        pending: &mut Option<(usize, Option<f64>, Option<f64>, Option<String>)>,
        tiers: &mut [Tier],
        ctx: &Ctx,
    ) -> Result<()> {
        if let Some((line, s, e, t)) = pending.take() {
            let tier = tiers.last_mut().expect("interval outside tier");
            let (Some(s), Some(e), Some(t)) = (s, e, t) else {
                return Err(ctx.err(line, Some(&tier.name), "incomplete interval"));
            };
            tier.intervals.push((line, Interval::new(t, s, e)));
        }
        Ok(())
    }

    for e in it {
        let tier_name = tiers.last().map(|t| t.name.clone());
        let tn = tier_name.as_deref();
        let key = e.key.as_str();
        if key == "item []" || key == "tiers?" {
            continue;
        }
        if let Some(rest) = key.strip_prefix("item [") {
            if !rest.ends_with(']') {
                return Err(ctx.err(e.line, tn, format!("unexpected key {key:?}")));
            }
            flush(&mut pending, &mut tiers, &ctx)?;
            tiers.push(Tier {
                name: String::new(),
                class: String::new(),
                line: e.line,
                declared: 0,
                intervals: Vec::new(),
            });
            continue;
        }
        if tiers.is_empty() {
            match key {
                "xmin" => xmin = Some(num(&e, None)?),
                "xmax" => xmax = Some(num(&e, None)?),
                "size" => {
                    declared_tiers = Some(e.value.parse::<usize>().map_err(|_| {
                        ctx.err(e.line, None, format!("bad tier count {:?}", e.value))
                    })?)
                }
                _ => return Err(ctx.err(e.line, None, format!("unexpected key {key:?}"))),
            }
            continue;
        }
        if key.starts_with("intervals [") || key.starts_with("points [") {
            flush(&mut pending, &mut tiers, &ctx)?;
            pending = Some((e.line, None, None, None));
            continue;
        }
        match (key, pending.as_mut()) {
            ("xmin", Some(p)) | ("number", Some(p)) | ("time", Some(p)) => {
                let v = num(&e, tn)?;
                p.1 = Some(v);
                if key != "xmin" {
                    p.2 = Some(v);
                }
            }
            ("xmax", Some(p)) => p.2 = Some(num(&e, tn)?),
            ("text", Some(p)) | ("mark", Some(p)) => p.3 = Some(e.value.clone()),
            ("class", None) => tiers.last_mut().unwrap().class = e.value.clone(),
            ("name", None) => tiers.last_mut().unwrap().name = e.value.clone(),
            ("xmin", None) | ("xmax", None) => {
                num(&e, tn)?;
            }
            ("intervals: size", None) | ("points: size", None) => {
                tiers.last_mut().unwrap().declared = e.value.parse::<usize>().map_err(|_| {
                    ctx.err(e.line, tn, format!("bad interval count {:?}", e.value))
                })?;
            }
            _ => return Err(ctx.err(e.line, tn, format!("unexpected key {key:?}"))),
        }
    }
    flush(&mut pending, &mut tiers, &ctx)?;

    let xmin = xmin.ok_or_else(|| ctx.err(3, None, "malformed header: missing xmin"))?;
    let xmax = xmax.ok_or_else(|| ctx.err(3, None, "malformed header: missing xmax"))?;
    if let Some(n) = declared_tiers {
        if n != tiers.len() {
            return Err(ctx.err(
                tiers.last().map_or(1, |t| t.line),
                None,
                format!("declared {n} tiers but found {}", tiers.len()),
            ));
        }
    }

    for tier in &tiers {
        if tier.declared != tier.intervals.len() {
            return Err(ctx.err(
                tier.line,
                Some(&tier.name),
                format!(
                    "declared {} intervals but found {}",
                    tier.declared,
                    tier.intervals.len()
                ),
            ));
        }
        if tier.class != "IntervalTier" {
            continue;
        }
        let mut prev_end = f64::NEG_INFINITY;
        for (line, iv) in &tier.intervals {
            if !(iv.end >= iv.start) {
                return Err(ctx.err(*line, Some(&tier.name), "interval ends before it starts"));
            }
            if iv.start < prev_end - 1e-9 {
                return Err(ctx.err(*line, Some(&tier.name), "overlapping intervals"));
            }
            prev_end = iv.end;
        }
    }

    let take = |name: &str| -> Result<Vec<(usize, Interval)>> {
        tiers
            .iter()
            .find(|t| t.name == name && t.class == "IntervalTier")
            .map(|t| t.intervals.clone())
            .ok_or_else(|| ctx.err(1, Some(name), "missing tier"))
    };
    let phones = take(&cfg.phone_tier)?;
    let words = take(&cfg.word_tier)?;

    for (line, p) in &phones {
        if p.is_silence() {
            continue;
        }
        let nested = words
            .iter()
            .any(|(_, w)| w.start - cfg.tolerance <= p.start && p.end <= w.end + cfg.tolerance);
        if !nested {
            return Err(ctx.err(
                *line,
                Some(&cfg.phone_tier),
                format!(
                    "phone/word nesting violated: {:?} [{}, {}] crosses a word boundary",
                    p.label, p.start, p.end
                ),
            ));
        }
    }

    Ok(UtteranceAlignment {
        utterance_id: utterance_id.to_string(),
        xmin,
        xmax,
        phone_tier: phones.into_iter().map(|(_, iv)| iv).collect(),
        word_tier: words.into_iter().map(|(_, iv)| iv).collect(),
    })
}

/// Split the file into `key = value` entries, unquoting string values.
/// Quoted strings may span several lines; `""` is an escaped quote.
fn tokenize(text: &str, ctx: &Ctx) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    while let Some((i, raw)) = lines.next() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(key) = line.strip_suffix(':') {
            out.push(Entry {
                line: line_no,
                key: key.trim().to_string(),
                value: String::new(),
            });
            continue;
        }
        if line == "tiers? <exists>" {
            out.push(Entry {
                line: line_no,
                key: "tiers?".into(),
                value: "<exists>".into(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ctx.err(
                line_no,
                None,
                format!("expected `key = value`, got {line:?}"),
            ));
        };
        let key = key.trim().to_string();
        let value = value.trim();
        let value = if let Some(body) = value.strip_prefix('"') {
            let mut buf = body.to_string();
            loop {
                if let Some(s) = close_string(&buf) {
                    break s;
                }
                match lines.next() {
                    Some((_, more)) => {
                        buf.push('\n');
                        buf.push_str(more);
                    }
                    None => return Err(ctx.err(line_no, None, "unterminated string")),
                }
            }
        } else {
            value.to_string()
        };
        out.push(Entry {
            line: line_no,
            key,
            value,
        });
    }
    Ok(out)
}

/// If `s` (the text after an opening quote) contains the closing quote,
/// return the unescaped string.
fn close_string(s: &str) -> Option<String> {
    let mut out = String::new();
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '"' {
            if chars.peek() == Some(&'"') {
                chars.next();
                out.push('"');
            } else {
                return Some(out);
            }
        } else {
            out.push(c);
        }
    }
    None
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Render an alignment as a long-format TextGrid with a word tier followed
/// by a phone tier.
pub fn write_textgrid(a: &UtteranceAlignment, cfg: &AlignmentConfig) -> String {
    let mut s = String::new();
    s.push_str("File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n");
    let _ = writeln!(s, "xmin = {}", a.xmin);
    let _ = writeln!(s, "xmax = {}", a.xmax);
    s.push_str("tiers? <exists>\nsize = 2\nitem []:\n");
    for (k, (name, tier)) in [
        (&cfg.word_tier, &a.word_tier),
        (&cfg.phone_tier, &a.phone_tier),
    ]
    .into_iter()
    .enumerate()
    {
        let _ = writeln!(s, "    item [{}]:", k + 1);
        s.push_str("        class = \"IntervalTier\"\n");
        let _ = writeln!(s, "        name = {}", quote(name));
        let _ = writeln!(s, "        xmin = {}", a.xmin);
        let _ = writeln!(s, "        xmax = {}", a.xmax);
        let _ = writeln!(s, "        intervals: size = {}", tier.len());
        for (i, iv) in tier.iter().enumerate() {
            let _ = writeln!(s, "        intervals [{}]:", i + 1);
            let _ = writeln!(s, "            xmin = {}", iv.start);
            let _ = writeln!(s, "            xmax = {}", iv.end);
            let _ = writeln!(s, "            text = {}", quote(&iv.label));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TA: &str = r#"File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.4
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "IntervalTier"
        name = "words"
        xmin = 0
        xmax = 0.4
        intervals: size = 3
        intervals [1]:
            xmin = 0
            xmax = 0.1
            text = ""
        intervals [2]:
            xmin = 0.1
            xmax = 0.3
            text = "ta"
        intervals [3]:
            xmin = 0.3
            xmax = 0.4
            text = ""
    item [2]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 0.4
        intervals: size = 4
        intervals [1]:
            xmin = 0
            xmax = 0.1
            text = ""
        intervals [2]:
            xmin = 0.1
            xmax = 0.18
            text = "ʈ"
        intervals [3]:
            xmin = 0.18
            xmax = 0.3
            text = "ɑ"
        intervals [4]:
            xmin = 0.3
            xmax = 0.4
            text = ""
"#;

    #[test]
    fn parses_two_phone_word() {
        let a = parse_textgrid_str(TA, "u1", &AlignmentConfig::default()).unwrap();
        let phones: Vec<_> = a.phone_tier.iter().filter(|p| !p.is_silence()).collect();
        assert_eq!(phones.len(), 2);
        assert_eq!(phones[0], &Interval::new("ʈ", 0.10, 0.18));
        assert_eq!(phones[1], &Interval::new("ɑ", 0.18, 0.30));
        let words: Vec<_> = a.word_tier.iter().filter(|w| !w.is_silence()).collect();
        assert_eq!(words, vec![&Interval::new("ta", 0.10, 0.30)]);
        // silence retained
        assert_eq!(a.phone_tier.len(), 4);
    }

    #[test]
    fn empty_phone_tier() {
        let text = r#"File type = "ooTextFile"
Object class = "TextGrid"
xmin = 0
xmax = 1
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "IntervalTier"
        name = "words"
        xmin = 0
        xmax = 1
        intervals: size = 0
    item [2]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 1
        intervals: size = 0
"#;
        let a = parse_textgrid_str(text, "e", &AlignmentConfig::default()).unwrap();
        assert!(a.phone_tier.is_empty());
        assert!(a.word_tier.is_empty());
    }

    #[test]
    fn nesting_violation_is_reported() {
        // phone [ɑ] runs 50 ms past the end of its word
        let bad = TA
            .replacen(
                "xmax = 0.3\n            text = \"ɑ\"",
                "xmax = 0.35\n            text = \"ɑ\"",
                1,
            )
            .replacen(
                "xmin = 0.3\n            xmax = 0.4\n            text = \"\"\n",
                "xmin = 0.35\n            xmax = 0.4\n            text = \"\"\n",
                2,
            );
        let err = parse_textgrid_str(&bad, "u", &AlignmentConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("phone/word nesting violated"), "{msg}");
        assert!(msg.contains("phones"), "{msg}");
    }

    #[test]
    fn small_boundary_disagreement_is_tolerated() {
        let off = TA
            .replacen(
                "xmax = 0.3\n            text = \"ɑ\"",
                "xmax = 0.305\n            text = \"ɑ\"",
                1,
            )
            .replacen(
                "xmin = 0.3\n            xmax = 0.4\n            text = \"\"\n",
                "xmin = 0.305\n            xmax = 0.4\n            text = \"\"\n",
                2,
            );
        parse_textgrid_str(&off, "u", &AlignmentConfig::default()).unwrap();
    }

    #[test]
    fn malformed_header() {
        let bad = TA.replacen("ooTextFile", "binary", 1);
        match parse_textgrid_str(&bad, "u", &AlignmentConfig::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_tier_names_tier() {
        let cfg = AlignmentConfig {
            phone_tier: "segments".into(),
            ..AlignmentConfig::default()
        };
        let err = parse_textgrid_str(TA, "u", &cfg).unwrap_err();
        assert!(err.to_string().contains("segments"));
        assert!(err.to_string().contains("missing tier"));
    }

    #[test]
    fn overlapping_intervals() {
        let bad = TA.replacen("xmin = 0.18\n", "xmin = 0.15\n", 1);
        match parse_textgrid_str(&bad, "u", &AlignmentConfig::default()) {
            Err(Error::Parse {
                line,
                tier,
                message,
                ..
            }) => {
                assert_eq!(tier.as_deref(), Some("phones"));
                assert!(message.contains("overlapping"));
                assert_eq!(line, 41);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quoted_labels_round_trip() {
        let mut a = parse_textgrid_str(TA, "u", &AlignmentConfig::default()).unwrap();
        a.word_tier[1].label = "say \"ta\"".into();
        let text = write_textgrid(&a, &AlignmentConfig::default());
        let b = parse_textgrid_str(&text, "u", &AlignmentConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn point_tiers_are_skipped() {
        let extra = TA.replacen("size = 2", "size = 3", 1).to_string()
            + r#"    item [3]:
        class = "TextTier"
        name = "events"
        xmin = 0
        xmax = 0.4
        points: size = 1
        points [1]:
            number = 0.2
            mark = "click"
"#;
        let a = parse_textgrid_str(&extra, "u", &AlignmentConfig::default()).unwrap();
        assert_eq!(a.phone_tier.len(), 4);
    }
}
