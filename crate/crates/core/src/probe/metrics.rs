use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Support-weighted mean of per-class F1, in percent. Classes that never
/// occur in `y_true` get zero weight.
pub fn weighted_f1<T: Ord>(y_true: &[T], y_pred: &[T]) -> f64 {
    assert_eq!(y_true.len(), y_pred.len(), "label vectors differ in length");
    if y_true.is_empty() {
        return 0.0;
    }
    // per class: (tp, fp, fn)
    let mut c: BTreeMap<&T, [usize; 3]> = BTreeMap::new();
    for (t, p) in y_true.iter().zip(y_pred) {
        if t == p {
            c.entry(t).or_default()[0] += 1;
        } else {
            c.entry(p).or_default()[1] += 1;
            c.entry(t).or_default()[2] += 1;
        }
    }
    let n = y_true.len() as f64;
    let total: f64 = c
        .values()
        .map(|&[tp, fp, fn_]| {
            let support = (tp + fn_) as f64;
            if support == 0.0 {
                0.0
            } else {
                support / n * (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
            }
        })
        .sum();
    100.0 * total
}

pub fn accuracy<T: PartialEq>(y_true: &[T], y_pred: &[T]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    let hit = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    100.0 * hit as f64 / y_true.len() as f64
}

fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        m.entry(l).or_default().push(i);
    }
    m
}

fn n_classes(labels: &[usize], idx: &[usize]) -> usize {
    idx.iter()
        .map(|&i| labels[i])
        .collect::<BTreeSet<_>>()
        .len()
}

pub const SPLIT_ATTEMPTS: u64 = 5;

/// Stratified train/test split. Each class contributes
/// `round(test_fraction * n_c)` test items. Both sides must hold at least two
/// classes; otherwise the split is redrawn with the next seed, up to
/// [`SPLIT_ATTEMPTS`] times.
pub fn stratified_split(
    labels: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::validation("test fraction must be in [0, 1)"));
    }
    for attempt in 0..SPLIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (_, mut idx) in by_class(labels) {
            idx.shuffle(&mut rng);
            let k = (test_fraction * idx.len() as f64).round() as usize;
            test.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if n_classes(labels, &train) >= 2 && n_classes(labels, &test) >= 2 {
            return Ok((train, test));
        }
    }
    Err(Error::validation(format!(
        "could not draw a stratified split with at least two classes on each side after {SPLIT_ATTEMPTS} attempts"
    )))
}

/// Stratified k-fold assignment. Returns (train, validation) index pairs. A
/// fold whose training part holds fewer than two classes, or whose
/// validation part is empty, triggers a redraw with the next seed.
pub fn stratified_folds(
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::validation("need at least two folds"));
    }
    if labels.len() < k {
        return Err(Error::validation(format!(
            "{} items cannot fill {k} folds",
            labels.len()
        )));
    }
    'attempt: for attempt in 0..SPLIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut fold_of = vec![0usize; labels.len()];
        let mut next = 0usize;
        for (_, mut idx) in by_class(labels) {
            idx.shuffle(&mut rng);
            for i in idx {
                fold_of[i] = next % k;
                next += 1;
            }
        }
        let mut folds = Vec::with_capacity(k);
        for f in 0..k {
            let (val, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| fold_of[i] == f);
            if val.is_empty() || n_classes(labels, &train) < 2 {
                continue 'attempt;
            }
            folds.push((train, val));
        }
        return Ok(folds);
    }
    Err(Error::validation(format!(
        "could not draw {k} usable stratified folds after {SPLIT_ATTEMPTS} attempts"
    )))
}
