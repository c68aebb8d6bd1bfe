//! Alignment and rating ingestion.
//!
//! Forced-alignment TextGrids are parsed into [`UtteranceAlignment`]s, the
//! three-rater accent judgements are collapsed into an [`AccentLabel`], and
//! target phones are pulled out as [`PhoneToken`]s carrying their word
//! position.

mod ratings;
mod textgrid;
mod tokens;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use ratings::{merge_ratings, read_ratings, RatingRow};
pub use textgrid::{parse_textgrid, parse_textgrid_str, write_textgrid};
pub use tokens::{
    extract_tokens, locate_targets, read_tokens, tabulate_distribution, tokens_table, write_tokens,
    Distribution, LocatedPhone,
};

/// Perceived accent strength after merging the raters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccentLabel {
    NoNegligible,
    Mild,
    Strong,
}

impl AccentLabel {
    pub const ALL: [AccentLabel; 3] = [
        AccentLabel::NoNegligible,
        AccentLabel::Mild,
        AccentLabel::Strong,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AccentLabel::NoNegligible => "no_negligible",
            AccentLabel::Mild => "mild",
            AccentLabel::Strong => "strong",
        }
    }
}

impl fmt::Display for AccentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "no_negligible" | "no/negligible" | "nonegligible" | "none" => {
                Ok(AccentLabel::NoNegligible)
            }
            "mild" => Ok(AccentLabel::Mild),
            "strong" => Ok(AccentLabel::Strong),
            other => Err(Error::validation(format!("unknown accent label {other:?}"))),
        }
    }
}

/// Position of a phone within its word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Position {
    Initial,
    Medial,
    Final,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::Initial, Position::Medial, Position::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            Position::Initial => "initial",
            Position::Medial => "medial",
            Position::Final => "final",
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Position {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "initial" => Ok(Position::Initial),
            "medial" => Ok(Position::Medial),
            "final" => Ok(Position::Final),
            other => Err(Error::validation(format!(
                "unknown word position {other:?}"
            ))),
        }
    }
}

/// A labelled time span on one tier. Empty labels mark silence.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(label: impl Into<String>, start: f64, end: f64) -> Self {
        Interval {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn is_silence(&self) -> bool {
        self.label.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceAlignment {
    pub utterance_id: String,
    pub xmin: f64,
    pub xmax: f64,
    pub phone_tier: Vec<Interval>,
    pub word_tier: Vec<Interval>,
}

/// One aligned occurrence of a target phone.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneToken {
    pub utterance_id: String,
    pub phone: String,
    pub word_id: String,
    pub position: Position,
    pub t_start: f64,
    pub t_end: f64,
    pub accent: AccentLabel,
}

/// Tier names and boundary tolerance used when reading alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentConfig {
    pub phone_tier: String,
    pub word_tier: String,
    /// Allowed disagreement between phone and word boundaries, in seconds.
    pub tolerance: f64,
    /// Position assigned to a phone that spans its whole word.
    pub whole_word_position: Position,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            phone_tier: "phones".to_string(),
            word_tier: "words".to_string(),
            tolerance: 0.010,
            whole_word_position: Position::Initial,
        }
    }
}
