use std::path::Path;

use super::AccentLabel;
use crate::error::{Error, Result};

/// Raw ratings for one utterance as read from the ratings table.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingRow {
    pub utterance_id: String,
    pub ratings: Vec<u8>,
}

/// Collapse per-rater scores on the 1–4 scale into a three-level label.
///
/// The minimum score is taken; "very strong" (4) is folded into Strong.
pub fn merge_ratings(ratings: &[u8]) -> Result<AccentLabel> {
    if ratings.is_empty() {
        return Err(Error::validation("empty rater set"));
    }
    if let Some(bad) = ratings.iter().find(|r| !(1..=4).contains(*r)) {
        return Err(Error::validation(format!("rating {bad} outside [1, 4]")));
    }
    Ok(match ratings.iter().min().copied().unwrap() {
        1 => AccentLabel::NoNegligible,
        2 => AccentLabel::Mild,
        _ => AccentLabel::Strong,
    })
}

/// Read a delimited ratings table: `utterance_id` followed by one column per
/// rater. Comma or tab separated, with a header row; `#` starts a comment.
pub fn read_ratings(path: &Path) -> Result<Vec<RatingRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        tier: None,
        message,
    };
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let delim = if line.contains('\t') { '\t' } else { ',' };
        let mut cols = line.split(delim).map(str::trim);
        let id = cols.next().unwrap_or_default();
        if !header_seen {
            header_seen = true;
            if id != "utterance_id" {
                return Err(bad(
                    i + 1,
                    format!("expected header starting with utterance_id, got {id:?}"),
                ));
            }
            continue;
        }
        let ratings = cols
            .filter(|c| !c.is_empty())
            .map(|c| {
                c.parse::<u8>()
                    .map_err(|_| bad(i + 1, format!("rating {c:?} is not an integer")))
            })
            .collect::<Result<Vec<u8>>>()?;
        if ratings.is_empty() {
            return Err(bad(i + 1, format!("no ratings for {id}")));
        }
        rows.push(RatingRow {
            utterance_id: id.to_string(),
            ratings,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimum_rule() {
        assert_eq!(merge_ratings(&[2, 3, 4]).unwrap(), AccentLabel::Mild);
        assert_eq!(
            merge_ratings(&[1, 1, 1]).unwrap(),
            AccentLabel::NoNegligible
        );
        assert_eq!(merge_ratings(&[4, 4, 4]).unwrap(), AccentLabel::Strong);
        assert_eq!(merge_ratings(&[3, 4]).unwrap(), AccentLabel::Strong);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(merge_ratings(&[0, 2, 3]).is_err());
        assert!(merge_ratings(&[2, 5]).is_err());
        assert!(merge_ratings(&[]).is_err());
    }

    #[test]
    fn reads_tab_and_comma_tables() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.tsv");
        std::fs::write(
            &p,
            "# accent ratings\nutterance_id\tr1\tr2\tr3\nu1\t2\t3\t4\nu2\t1\t1\n",
        )
        .unwrap();
        let rows = read_ratings(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].ratings, vec![1, 1]);
        let p2 = dir.path().join("r.csv");
        std::fs::write(&p2, "utterance_id,a,b,c\nu1,4,4,4\n").unwrap();
        assert_eq!(read_ratings(&p2).unwrap()[0].ratings, vec![4, 4, 4]);
        std::fs::write(&p2, "utterance_id,a\nu1,x\n").unwrap();
        assert!(read_ratings(&p2).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut r in prop::collection::vec(1u8..=4, 1..6), seed in any::<u64>()) {
            let a = merge_ratings(&r).unwrap();
            // rotate by a seed-dependent amount and reverse
            let k = (seed as usize) % r.len();
            r.rotate_left(k);
            r.reverse();
            prop_assert_eq!(a, merge_ratings(&r).unwrap());
        }

        #[test]
        fn monotone(r in prop::collection::vec(1u8..=4, 1..6), idx in any::<prop::sample::Index>()) {
            let base = merge_ratings(&r).unwrap();
            let mut up = r.clone();
            let i = idx.index(up.len());
            if up[i] < 4 {
                up[i] += 1;
            }
            prop_assert!(merge_ratings(&up).unwrap() >= base);
        }
    }
}
