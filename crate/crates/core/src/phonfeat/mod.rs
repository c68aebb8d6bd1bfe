//! Phonological features: the phone→feature mapping, frame labelling, a
//! shallow frame-level feature classifier and segment-level profiles.

mod eval;
mod model;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::corpus::{PhoneToken, UtteranceAlignment};
use crate::error::{Error, Result};

pub use eval::{binary_scores, evaluate_features, scores_table, FeatureScore};
pub use model::{
    FeatureModel, FeatureModelConfig, Optimizer, TrainingReport, TrainingSet, FEATURE_MODEL_MAGIC,
};

/// The 26 phonological features, in model output order.
pub const FEATURES: [&str; 26] = [
    "syllabic",
    "consonantal",
    "long",
    "sonorant",
    "continuant",
    "delayed release",
    "approximant",
    "tap",
    "nasal",
    "voice",
    "spread glottis",
    "labial",
    "round",
    "labiodental",
    "coronal",
    "anterior",
    "distributed",
    "strident",
    "lateral",
    "dorsal",
    "high",
    "low",
    "front",
    "back",
    "tense",
    "constricted glottis",
];

pub const N_FEATURES: usize = FEATURES.len();

const MAPPING_RESOURCE: &str = include_str!("../../resources/feature_mapping.tsv");
const PAIRS_RESOURCE: &str = include_str!("../../resources/segment_pairs.tsv");

/// Phone labels that mark non-speech in MFA output.
const SILENCE_LABELS: [&str; 4] = ["sil", "sp", "spn", "<eps>"];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURES.iter().position(|f| *f == name)
}

fn is_silence(label: &str) -> bool {
    let l = label.trim();
    l.is_empty() || SILENCE_LABELS.contains(&l)
}

/// Phone → binary feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapping {
    map: BTreeMap<String, [bool; N_FEATURES]>,
}

impl FeatureMapping {
    /// The mapping bundled with the crate.
    pub fn builtin() -> Self {
        Self::parse(MAPPING_RESOURCE, "feature_mapping.tsv").expect("bundled mapping is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse the `feature<TAB>phone phone ...` resource. The first line must
    /// be the `# feature-mapping v1` marker and every one of the 26 features
    /// must have exactly one row.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            tier: None,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == "# feature-mapping v1" => {}
            _ => return Err(err(1, "missing `# feature-mapping v1` marker".into())),
        }
        let mut map: BTreeMap<String, [bool; N_FEATURES]> = BTreeMap::new();
        let mut seen = [false; N_FEATURES];
        let mut header = false;
        for (i, l) in lines {
            if l.trim().is_empty() || l.starts_with('#') {
                continue;
            }
            let (feat, phones) = l
                .split_once('\t')
                .ok_or_else(|| err(i + 1, "expected feature<TAB>phones".into()))?;
            if !header {
                header = true;
                if feat == "feature" {
                    continue;
                }
            }
            let f = feature_index(feat.trim())
                .ok_or_else(|| err(i + 1, format!("unknown feature {feat:?}")))?;
            if seen[f] {
                return Err(err(i + 1, format!("duplicate row for {feat:?}")));
            }
            seen[f] = true;
            for p in phones.split_whitespace() {
                map.entry(p.to_string()).or_insert([false; N_FEATURES])[f] = true;
            }
        }
        if let Some(f) = seen.iter().position(|s| !s) {
            return Err(err(0, format!("no row for feature {:?}", FEATURES[f])));
        }
        Ok(FeatureMapping { map })
    }

    pub fn get(&self, phone: &str) -> Option<&[bool; N_FEATURES]> {
        self.map.get(phone)
    }

    pub fn contains(&self, phone: &str) -> bool {
        self.map.contains_key(phone)
    }

    pub fn phones(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Names of the features set for `phone`.
    pub fn positive_features(&self, phone: &str) -> Option<Vec<&'static str>> {
        self.get(phone).map(|v| {
            FEATURES
                .iter()
                .zip(v)
                .filter(|(_, &b)| b)
                .map(|(f, _)| *f)
                .collect()
        })
    }

    /// Features on which two phones take different values.
    pub fn differing_features(&self, a: &str, b: &str) -> Option<Vec<&'static str>> {
        let (va, vb) = (self.get(a)?, self.get(b)?);
        Some(
            FEATURES
                .iter()
                .enumerate()
                .filter(|(i, _)| va[*i] != vb[*i])
                .map(|(_, f)| *f)
                .collect(),
        )
    }
}

/// A native / non-native segment pair with the features that define it.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPair {
    pub native: String,
    pub nonnative: String,
    pub contrastive: Vec<String>,
    pub non_contrastive: Vec<String>,
}

impl SegmentPair {
    /// Contrastive then non-contrastive features, in resource order.
    pub fn feature_list(&self) -> Vec<String> {
        self.contrastive
            .iter()
            .chain(&self.non_contrastive)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub pairs: Vec<SegmentPair>,
}

impl PairTable {
    pub fn builtin() -> Self {
        Self::parse(PAIRS_RESOURCE, "segment_pairs.tsv").expect("bundled pair table is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            tier: None,
            message,
        };
        let mut pairs = Vec::new();
        let mut header = false;
        for (i, l) in text.lines().enumerate() {
            if l.trim().is_empty() || l.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 4 {
                return Err(err(
                    i + 1,
                    format!("expected 4 columns, found {}", cols.len()),
                ));
            }
            if !header {
                header = true;
                if cols[0] == "native" {
                    continue;
                }
            }
            let feats = |s: &str| -> Result<Vec<String>> {
                s.split(',')
                    .map(str::trim)
                    .filter(|f| !f.is_empty())
                    .map(|f| {
                        feature_index(f)
                            .map(|_| f.to_string())
                            .ok_or_else(|| err(i + 1, format!("unknown feature {f:?}")))
                    })
                    .collect()
            };
            pairs.push(SegmentPair {
                native: cols[0].trim().to_string(),
                nonnative: cols[1].trim().to_string(),
                contrastive: feats(cols[2])?,
                non_contrastive: feats(cols[3])?,
            });
        }
        Ok(PairTable { pairs })
    }

    /// The pair whose non-native member is `segment`.
    pub fn for_target(&self, segment: &str) -> Option<&SegmentPair> {
        self.pairs.iter().find(|p| p.nonnative == segment)
    }
}

/// Binary feature targets for each frame: the vector of the phone whose
/// interval contains the frame center. Silence and gaps give a zero row.
pub fn label_frames(
    a: &UtteranceAlignment,
    mapping: &FeatureMapping,
    frame_times: &[f64],
) -> Result<DMatrix<f64>> {
    let missing: Vec<&str> = {
        let mut m: Vec<&str> = a
            .phone_tier
            .iter()
            .map(|p| p.label.trim())
            .filter(|l| !is_silence(l) && !mapping.contains(l))
            .collect();
        m.sort_unstable();
        m.dedup();
        m
    };
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "{}: phones missing from feature mapping: {}",
            a.utterance_id,
            missing.join(" ")
        )));
    }
    let mut out = DMatrix::zeros(frame_times.len(), N_FEATURES);
    let tier = &a.phone_tier;
    for (r, &t) in frame_times.iter().enumerate() {
        // tiers are time-ordered and non-overlapping, so ends are sorted
        let j = tier.partition_point(|p| p.end <= t);
        if let Some(p) = tier.get(j).filter(|p| p.start <= t) {
            if let Some(v) = mapping.get(p.label.trim()) {
                for (f, &b) in v.iter().enumerate() {
                    if b {
                        out[(r, f)] = 1.0;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Frame-averaged feature probabilities for one token.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatureProfile {
    pub token: PhoneToken,
    pub probs: Vec<f64>,
}

/// Indices of frames whose centers fall in `[t_start, t_end)`.
pub fn covered_frames(frame_times: &[f64], t_start: f64, t_end: f64) -> std::ops::Range<usize> {
    let lo = frame_times.partition_point(|&t| t < t_start);
    let hi = frame_times.partition_point(|&t| t < t_end);
    lo..hi.max(lo)
}

/// Mean of the rows of `probs` covered by the token span.
pub fn segment_profile(
    probs: &DMatrix<f64>,
    frame_times: &[f64],
    t_start: f64,
    t_end: f64,
) -> Result<Vec<f64>> {
    let range = covered_frames(frame_times, t_start, t_end);
    if range.is_empty() {
        return Err(Error::validation(format!(
            "segment shorter than frame hop: [{t_start}, {t_end}] covers no frame center"
        )));
    }
    let n = range.len() as f64;
    Ok((0..probs.ncols())
        .map(|c| range.clone().map(|r| probs[(r, c)]).sum::<f64>() / n)
        .collect())
}

/// Score every token of one utterance against the model.
pub fn score_segments(
    model: &FeatureModel,
    frames: &crate::mfcc::FrameMatrix,
    tokens: &[PhoneToken],
) -> Result<Vec<SegmentFeatureProfile>> {
    let probs = model.predict(frames)?;
    tokens
        .iter()
        .map(|t| {
            segment_profile(&probs, &frames.frame_times, t.t_start, t.t_end).map(|p| {
                SegmentFeatureProfile {
                    token: t.clone(),
                    probs: p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                }
            })
        })
        .collect()
}
