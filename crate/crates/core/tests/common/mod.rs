//! Reference implementations shared by the core tests and the acceptance
//! binary. They use plain loops and textbook formulas, not library code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use segprobe_core::probe::{ProbeKind, ProbeModel};
use segprobe_core::synth;

// Independent reference for the smooth-loss gradients, written without the
// library's solver state.
pub fn oracle_gradient(
    kind: ProbeKind,
    x: &DMatrix<f64>,
    y: &[usize],
    w: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, d) = x.shape();
    let k = w.nrows();
    let mut gw = DMatrix::zeros(k, d);
    let mut gb = DVector::zeros(k);
    for i in 0..n {
        let s: Vec<f64> = (0..k)
            .map(|c| (0..d).map(|j| w[(c, j)] * x[(i, j)]).sum::<f64>() + b[c])
            .collect();
        let r: Vec<f64> = match kind {
            ProbeKind::LogReg => {
                let m = s.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                (0..k)
                    .map(|c| (s[c] - m).exp() / z - if y[i] == c { 1.0 } else { 0.0 })
                    .collect()
            }
            ProbeKind::LinearSvm => (0..k)
                .map(|c| {
                    let t = if y[i] == c { 1.0 } else { -1.0 };
                    let slack = 1.0 - t * s[c];
                    if slack > 0.0 {
                        -2.0 * t * slack
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        for c in 0..k {
            gb[c] += r[c] / n as f64;
            for j in 0..d {
                gw[(c, j)] += r[c] * x[(i, j)] / n as f64;
            }
        }
    }
    (gw, gb)
}

pub fn oracle_kkt(kind: ProbeKind, x: &DMatrix<f64>, y: &[usize], m: &ProbeModel) -> f64 {
    let (gw, gb) = oracle_gradient(kind, x, y, &m.w, &m.b);
    let mut worst = gb.amax();
    for c in 0..m.w.nrows() {
        for j in 0..m.w.ncols() {
            let w = m.w[(c, j)];
            let v = if w == 0.0 {
                (gw[(c, j)].abs() - m.lambda).max(0.0)
            } else {
                (gw[(c, j)] + m.lambda * w.signum()).abs()
            };
            worst = worst.max(v);
        }
    }
    worst
}

pub fn random_problem(seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut r = synth::rng(seed);
    let n = r.random_range(30..80);
    let d = r.random_range(3..12);
    let x = synth::gaussian_matrix(&mut r, n, d);
    let beta = synth::gaussian_matrix(&mut r, 3, d);
    let y = (0..n)
        .map(|i| {
            let s: Vec<f64> = (0..3)
                .map(|c| {
                    (0..d).map(|j| beta[(c, j)] * x[(i, j)]).sum::<f64>() + synth::normal(&mut r)
                })
                .collect();
            (0..3).max_by(|a, b| s[*a].total_cmp(&s[*b])).unwrap()
        })
        .collect();
    (x, y)
}

// PCA by eigen-decomposition of the scatter matrix, then ordinary least
// squares of centered y on the kept scores.
pub fn oracle_r2(x: &DMatrix<f64>, y: &[f64], keep: f64) -> f64 {
    let n = x.nrows();
    let mut xc = x.clone();
    let mean = x.row_mean();
    for mut r in xc.row_iter_mut() {
        r -= &mean;
    }
    let ym = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
    let eig = SymmetricEigen::new(xc.transpose() * &xc);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut acc = 0.0;
    let mut kept = Vec::new();
    for &i in &order {
        kept.push(i);
        acc += eig.eigenvalues[i].max(0.0);
        if acc >= keep * total {
            break;
        }
    }
    let scores = &xc * eig.eigenvectors.select_columns(&kept);
    let coef = (scores.transpose() * &scores)
        .lu()
        .solve(&(scores.transpose() * &yc))
        .unwrap();
    let fit = &scores * coef;
    fit.norm_squared() / yc.norm_squared()
}
