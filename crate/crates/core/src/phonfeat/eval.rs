use super::model::{FeatureModel, TrainingSet};
use crate::error::Result;
use crate::table::{fmt_f, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScore {
    pub name: String,
    /// Percent.
    pub accuracy: f64,
    /// Percent, positive class.
    pub f1: f64,
}

/// Accuracy and positive-class F1, both in percent. F1 is 100 when there
/// are no positives in either labels or predictions.
pub fn binary_scores(tp: usize, fp: usize, fn_: usize, tn: usize) -> (f64, f64) {
    let n = tp + fp + fn_ + tn;
    let acc = if n == 0 {
        100.0
    } else {
        100.0 * (tp + tn) as f64 / n as f64
    };
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 {
        100.0
    } else {
        100.0 * (2 * tp) as f64 / denom as f64
    };
    (acc, f1)
}

/// Frame-level scores per feature at threshold 0.5.
pub fn evaluate_features(model: &FeatureModel, heldout: &TrainingSet) -> Result<Vec<FeatureScore>> {
    let nf = model.feature_names.len();
    let mut counts = vec![[0usize; 4]; nf];
    for (frames, labels) in &heldout.items {
        let p = model.predict(frames)?;
        for r in 0..p.nrows() {
            for (f, c) in counts.iter_mut().enumerate() {
                let pred = p[(r, f)] >= 0.5;
                let gold = labels[(r, f)] >= 0.5;
                let k = match (pred, gold) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                c[k] += 1;
            }
        }
    }
    Ok(counts
        .iter()
        .zip(&model.feature_names)
        .map(|(c, name)| {
            let (accuracy, f1) = binary_scores(c[0], c[1], c[2], c[3]);
            FeatureScore {
                name: name.clone(),
                accuracy,
                f1,
            }
        })
        .collect())
}

pub fn scores_table(scores: &[FeatureScore]) -> Table {
    let mut t = Table::new(&["feature", "accuracy", "f1"]);
    for s in scores {
        t.push(vec![s.name.clone(), fmt_f(s.accuracy, 2), fmt_f(s.f1, 2)]);
    }
    t
}
