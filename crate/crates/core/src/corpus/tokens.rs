use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{AccentLabel, AlignmentConfig, Interval, PhoneToken, Position, UtteranceAlignment};
use crate::error::{Error, Result};
use crate::table::Table;

/// A target phone located inside its word, before any accent is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedPhone {
    pub phone: Interval,
    pub word_index: usize,
    pub word: String,
    pub position: Position,
}

fn position_in_word(p: &Interval, w: &Interval, cfg: &AlignmentConfig) -> Position {
    let at_start = (p.start - w.start).abs() <= cfg.tolerance;
    let at_end = (p.end - w.end).abs() <= cfg.tolerance;
    match (at_start, at_end) {
        (true, true) => cfg.whole_word_position,
        (true, false) => Position::Initial,
        (false, true) => Position::Final,
        (false, false) => Position::Medial,
    }
}

/// Find every phone interval whose label is in `targets` and classify its
/// position within the enclosing word.
pub fn locate_targets(
    a: &UtteranceAlignment,
    targets: &BTreeSet<String>,
    cfg: &AlignmentConfig,
) -> Result<Vec<LocatedPhone>> {
    if targets.is_empty() {
        return Err(Error::validation("target segment set is empty"));
    }
    let mut out = Vec::new();
    for p in a
        .phone_tier
        .iter()
        .filter(|p| targets.contains(p.label.trim()))
    {
        // the containing word is the one with the largest overlap among those
        // that contain the phone within tolerance
        let word = a
            .word_tier
            .iter()
            .enumerate()
            .filter(|(_, w)| w.start - cfg.tolerance <= p.start && p.end <= w.end + cfg.tolerance)
            .max_by(|(_, x), (_, y)| {
                let ox = x.end.min(p.end) - x.start.max(p.start);
                let oy = y.end.min(p.end) - y.start.max(p.start);
                ox.total_cmp(&oy)
            });
        let Some((wi, w)) = word else {
            return Err(Error::validation(format!(
                "{}: phone {:?} at [{}, {}] is not contained in any word interval",
                a.utterance_id, p.label, p.start, p.end
            )));
        };
        out.push(LocatedPhone {
            phone: Interval::new(p.label.trim(), p.start, p.end),
            word_index: wi,
            word: w.label.clone(),
            position: position_in_word(p, w, cfg),
        });
    }
    Ok(out)
}

/// One token per target-phone occurrence, tagged with the utterance's accent.
pub fn extract_tokens(
    a: &UtteranceAlignment,
    targets: &BTreeSet<String>,
    accent: AccentLabel,
    cfg: &AlignmentConfig,
) -> Result<Vec<PhoneToken>> {
    Ok(locate_targets(a, targets, cfg)?
        .into_iter()
        .map(|l| PhoneToken {
            utterance_id: a.utterance_id.clone(),
            phone: l.phone.label,
            word_id: format!("{}:{}", l.word_index, l.word),
            position: l.position,
            t_start: l.phone.start,
            t_end: l.phone.end,
            accent,
        })
        .collect())
}

/// Token counts by (segment, position, accent).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Distribution {
    pub counts: BTreeMap<(String, Position, AccentLabel), usize>,
}

impl Distribution {
    pub fn get(&self, segment: &str, position: Position, accent: AccentLabel) -> usize {
        self.counts
            .get(&(segment.to_string(), position, accent))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["segment", "position", "accent", "count"]);
        for ((seg, pos, acc), n) in &self.counts {
            t.push(vec![
                seg.clone(),
                pos.to_string(),
                acc.to_string(),
                n.to_string(),
            ]);
        }
        t
    }
}

/// Tabulate tokens over the full segment × position × accent grid. Every
/// segment in `segments` gets all nine cells even when they are empty.
pub fn tabulate_distribution(tokens: &[PhoneToken], segments: &[String]) -> Distribution {
    let mut counts = BTreeMap::new();
    let segs: BTreeSet<&str> = segments
        .iter()
        .map(String::as_str)
        .chain(tokens.iter().map(|t| t.phone.as_str()))
        .collect();
    for s in segs {
        for p in Position::ALL {
            for a in AccentLabel::ALL {
                counts.insert((s.to_string(), p, a), 0);
            }
        }
    }
    for t in tokens {
        *counts
            .get_mut(&(t.phone.clone(), t.position, t.accent))
            .expect("cell seeded above") += 1;
    }
    Distribution { counts }
}

const TOKEN_COLUMNS: [&str; 7] = [
    "utterance_id",
    "phone",
    "word_id",
    "position",
    "t_start",
    "t_end",
    "accent",
];

pub fn tokens_table(tokens: &[PhoneToken]) -> Table {
    let mut t = Table::new(&TOKEN_COLUMNS);
    for tok in tokens {
        t.push(vec![
            tok.utterance_id.clone(),
            tok.phone.clone(),
            tok.word_id.clone(),
            tok.position.to_string(),
            tok.t_start.to_string(),
            tok.t_end.to_string(),
            tok.accent.to_string(),
        ]);
    }
    t
}

pub fn write_tokens(path: &Path, tokens: &[PhoneToken], comments: &[String]) -> Result<()> {
    tokens_table(tokens).write(path, comments)
}

pub fn read_tokens(path: &Path) -> Result<Vec<PhoneToken>> {
    let t = Table::read(path)?;
    let idx: Vec<usize> = TOKEN_COLUMNS
        .iter()
        .map(|c| t.require(c))
        .collect::<Result<_>>()?;
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::validation(format!("{}: bad time {s:?}", path.display())))
    };
    t.rows
        .iter()
        .map(|r| {
            Ok(PhoneToken {
                utterance_id: r[idx[0]].clone(),
                phone: r[idx[1]].clone(),
                word_id: r[idx[2]].clone(),
                position: r[idx[3]].parse()?,
                t_start: num(&r[idx[4]])?,
                t_end: num(&r[idx[5]])?,
                accent: r[idx[6]].parse()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_textgrid_str, write_textgrid};
    use proptest::prelude::*;

    fn word(label: &str, s: f64, e: f64) -> Interval {
        Interval::new(label, s, e)
    }

    fn fixture() -> UtteranceAlignment {
        // "ta" [ʈ ɑ], "bɑɾɑ" [b ɑ ɾ ɑ], "ʋɑ" [ʋ ɑ], "ɑʋ" [ɑ ʋ], "ʋ" [ʋ]
        UtteranceAlignment {
            utterance_id: "u1".into(),
            xmin: 0.0,
            xmax: 2.0,
            word_tier: vec![
                word("", 0.0, 0.1),
                word("ta", 0.1, 0.3),
                word("bara", 0.3, 0.7),
                word("va", 0.7, 0.9),
                word("av", 0.9, 1.1),
                word("v", 1.1, 1.2),
                word("", 1.2, 2.0),
            ],
            phone_tier: vec![
                word("", 0.0, 0.1),
                word("ʈ", 0.1, 0.18),
                word("ɑ", 0.18, 0.3),
                word("b", 0.3, 0.4),
                word("ɑ", 0.4, 0.5),
                word("ɾ", 0.5, 0.6),
                word("ɑ", 0.6, 0.7),
                word("ʋ", 0.7, 0.8),
                word("ɑ", 0.8, 0.9),
                word("ɑ", 0.9, 1.0),
                word("ʋ", 1.0, 1.1),
                word("ʋ", 1.1, 1.2),
                word("", 1.2, 2.0),
            ],
        }
    }

    fn targets() -> BTreeSet<String> {
        ["ʋ", "ɾ", "ʈ"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn positions() {
        let cfg = AlignmentConfig::default();
        let toks = extract_tokens(&fixture(), &targets(), AccentLabel::Mild, &cfg).unwrap();
        let got: Vec<(&str, Position)> = toks
            .iter()
            .map(|t| (t.phone.as_str(), t.position))
            .collect();
        assert_eq!(
            got,
            vec![
                ("ʈ", Position::Initial),
                ("ɾ", Position::Medial),
                ("ʋ", Position::Initial),
                ("ʋ", Position::Final),
                ("ʋ", Position::Initial),
            ]
        );
        assert_eq!(toks[1].word_id, "2:bara");
        assert!(toks.iter().all(|t| t.accent == AccentLabel::Mild));
    }

    #[test]
    fn whole_word_position_configurable() {
        let cfg = AlignmentConfig {
            whole_word_position: Position::Final,
            ..AlignmentConfig::default()
        };
        let toks = extract_tokens(&fixture(), &targets(), AccentLabel::Mild, &cfg).unwrap();
        assert_eq!(toks.last().unwrap().position, Position::Final);
    }

    #[test]
    fn empty_targets_rejected() {
        let cfg = AlignmentConfig::default();
        assert!(extract_tokens(&fixture(), &BTreeSet::new(), AccentLabel::Mild, &cfg).is_err());
    }

    #[test]
    fn phone_outside_words_rejected() {
        let mut a = fixture();
        a.word_tier.truncate(1);
        let cfg = AlignmentConfig::default();
        assert!(extract_tokens(&a, &targets(), AccentLabel::Mild, &cfg).is_err());
    }

    #[test]
    fn distribution_counts() {
        let cfg = AlignmentConfig::default();
        let segs: Vec<String> = targets().into_iter().collect();
        assert_eq!(tabulate_distribution(&[], &segs).total(), 0);
        assert_eq!(tabulate_distribution(&[], &segs).counts.len(), 27);

        let mut toks = extract_tokens(&fixture(), &targets(), AccentLabel::Mild, &cfg).unwrap();
        toks.extend(extract_tokens(&fixture(), &targets(), AccentLabel::Strong, &cfg).unwrap());
        let d = tabulate_distribution(&toks, &segs);
        // hand tally: per copy ʈ-I 1, ɾ-M 1, ʋ-I 2, ʋ-F 1
        assert_eq!(d.get("ʋ", Position::Initial, AccentLabel::Mild), 2);
        assert_eq!(d.get("ʋ", Position::Final, AccentLabel::Strong), 1);
        assert_eq!(d.get("ɾ", Position::Medial, AccentLabel::Strong), 1);
        assert_eq!(d.get("ʈ", Position::Initial, AccentLabel::NoNegligible), 0);
        assert_eq!(d.total(), 10);

        let three: Vec<PhoneToken> = (0..3)
            .map(|_| PhoneToken {
                utterance_id: "x".into(),
                phone: "ʋ".into(),
                word_id: "0:w".into(),
                position: Position::Final,
                t_start: 0.0,
                t_end: 0.1,
                accent: AccentLabel::Strong,
            })
            .collect();
        let d = tabulate_distribution(&three, &segs);
        assert_eq!(d.get("ʋ", Position::Final, AccentLabel::Strong), 3);
        assert_eq!(d.counts.values().filter(|&&n| n > 0).count(), 1);
    }

    #[test]
    fn token_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tokens.tsv");
        let toks = extract_tokens(
            &fixture(),
            &targets(),
            AccentLabel::Strong,
            &AlignmentConfig::default(),
        )
        .unwrap();
        write_tokens(&p, &toks, &[]).unwrap();
        assert_eq!(read_tokens(&p).unwrap(), toks);
    }

    #[test]
    fn textgrid_write_back_reproduces_tokens() {
        let cfg = AlignmentConfig::default();
        let a = fixture();
        let before = extract_tokens(&a, &targets(), AccentLabel::Mild, &cfg).unwrap();
        let text = write_textgrid(&a, &cfg);
        let b = parse_textgrid_str(&text, "u1", &cfg).unwrap();
        let after = extract_tokens(&b, &targets(), AccentLabel::Mild, &cfg).unwrap();
        assert_eq!(before, after);
    }

    proptest! {
        // random word segmentations with random phone splits
        #[test]
        fn tokens_sum_and_round_trip(
            words in prop::collection::vec(prop::collection::vec((0usize..4, 1u32..20), 1..5), 1..6)
        ) {
            let labels = ["ʋ", "ɾ", "ʈ", "ɑ"];
            let mut t = 0.0f64;
            let mut a = UtteranceAlignment {
                utterance_id: "p".into(), xmin: 0.0, xmax: 0.0,
                phone_tier: vec![], word_tier: vec![],
            };
            for (wi, phones) in words.iter().enumerate() {
                let ws = t;
                for (l, dur) in phones {
                    let d = *dur as f64 * 0.02;
                    a.phone_tier.push(Interval::new(labels[*l], t, t + d));
                    t += d;
                }
                a.word_tier.push(Interval::new(format!("w{wi}"), ws, t));
            }
            a.xmax = t;
            let cfg = AlignmentConfig::default();
            let toks = extract_tokens(&a, &targets(), AccentLabel::Mild, &cfg).unwrap();
            let n_target = a.phone_tier.iter().filter(|p| p.label != "ɑ").count();
            prop_assert_eq!(toks.len(), n_target);
            let segs: Vec<String> = targets().into_iter().collect();
            prop_assert_eq!(tabulate_distribution(&toks, &segs).total(), toks.len());
            let b = parse_textgrid_str(&write_textgrid(&a, &cfg), "p", &cfg).unwrap();
            prop_assert_eq!(extract_tokens(&b, &targets(), AccentLabel::Mild, &cfg).unwrap(), toks);
        }
    }
}
