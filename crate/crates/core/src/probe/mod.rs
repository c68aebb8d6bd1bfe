//! L1-regularized accent probes.
//!
//! Two linear probes share one interface: multinomial logistic regression
//! and a one-vs-rest squared-hinge SVM. Both are fitted by cyclic coordinate
//! descent with proximal Newton steps and a backtracking line search, which
//! keeps unselected coefficients at exactly zero.

mod logreg;
mod metrics;
mod report;
mod svm;
mod sweep;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use metrics::{accuracy, stratified_folds, stratified_split, weighted_f1, SPLIT_ATTEMPTS};
pub use report::{best_layer_table, layer_scores_table, ProbeRun};
pub use sweep::{
    cv_select, lambda_grid, layer_sweep, CvOutcome, InMemoryLayers, LambdaGrid, LayerScore,
    LayerSource, ProbeConfig, ProbeResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProbeKind {
    LogReg,
    LinearSvm,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 2] = [ProbeKind::LogReg, ProbeKind::LinearSvm];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::LogReg => "logreg",
            ProbeKind::LinearSvm => "svm",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logreg" | "lr" | "logistic" => Ok(ProbeKind::LogReg),
            "svm" | "linearsvm" | "linear_svm" => Ok(ProbeKind::LinearSvm),
            other => Err(Error::validation(format!("unknown probe kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once every optimality condition holds within this tolerance.
    pub tol: f64,
    /// Maximum number of full coordinate sweeps.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitInfo {
    pub sweeps: usize,
    pub converged: bool,
    /// Largest optimality violation at the returned solution.
    pub kkt_violation: f64,
    /// Objective value after each sweep.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    /// Label carried by each row of `w`.
    pub classes: Vec<usize>,
    /// n_classes × dim
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
    pub info: FitInfo,
}

impl ProbeModel {
    pub fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = x * self.w.transpose();
        for mut row in s.row_iter_mut() {
            row += self.b.transpose();
        }
        s
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let s = self.scores(x);
        s.row_iter()
            .map(|r| {
                let mut best = 0;
                for c in 1..r.len() {
                    if r[c] > r[best] {
                        best = c;
                    }
                }
                self.classes[best]
            })
            .collect()
    }

    /// Class probabilities; only meaningful for the logistic probe.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = self.scores(x);
        for mut row in s.row_iter_mut() {
            let m = row.max();
            row.apply(|v| *v = (*v - m).exp());
            let z = row.sum();
            row /= z;
        }
        s
    }
}

/// Columns with any coefficient above `threshold` in absolute value.
pub fn select_features(m: &ProbeModel, threshold: f64) -> BTreeSet<usize> {
    (0..m.w.ncols())
        .filter(|&j| m.w.column(j).iter().any(|v| v.abs() > threshold))
        .collect()
}

/// Column z-scoring with statistics from the fitting data. Zero-variance
/// columns map to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
        let scale = DVector::from_iterator(
            x.ncols(),
            x.column_iter().zip(mean.iter()).map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            }),
        );
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }
}

/// Distinct labels in ascending order and each item's class position.
pub(crate) fn encode_classes(y: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let classes: Vec<usize> = y
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let idx = y
        .iter()
        .map(|l| classes.binary_search(l).expect("label collected above"))
        .collect();
    (classes, idx)
}

fn check_inputs(x: &DMatrix<f64>, y: &[usize], lambda: f64) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::validation(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite value in design matrix"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::validation(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let k = y.iter().collect::<BTreeSet<_>>().len();
    if k < 2 {
        return Err(Error::validation("probe needs at least two classes in y"));
    }
    if y.len() < k {
        return Err(Error::validation("fewer items than classes"));
    }
    Ok(())
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Zero coefficients stay at zero while their gradient is within this
/// relative slack of lambda, so rounding in the gradient cannot create
/// spurious 1e-17 weights at lambda = lambda_max.
fn inside_zero_band(g: f64, lambda: f64) -> bool {
    g.abs() <= lambda * (1.0 + 1e-12)
}

/// Smallest lambda at which the all-zero coefficient matrix is optimal,
/// from the loss gradient at W = 0 with optimal intercepts.
pub fn lambda_max(kind: ProbeKind, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
    check_inputs(x, y, 0.0)?;
    let (classes, yi) = encode_classes(y);
    let n = y.len() as f64;
    let mut best = 0.0f64;
    for c in 0..classes.len() {
        let n_pos = yi.iter().filter(|&&v| v == c).count() as f64;
        // per-row loss derivative with respect to the class score at W = 0
        let r: Vec<f64> = match kind {
            ProbeKind::LogReg => {
                let pi = n_pos / n;
                yi.iter().map(|&v| pi - (v == c) as u8 as f64).collect()
            }
            ProbeKind::LinearSvm => {
                let b = (2.0 * n_pos - n) / n;
                yi.iter()
                    .map(|&v| {
                        let s = if v == c { 1.0 } else { -1.0 };
                        -2.0 * s * (1.0 - s * b).max(0.0)
                    })
                    .collect()
            }
        };
        for xj in x.column_iter() {
            let g: f64 = xj.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n;
            best = best.max(g.abs());
        }
    }
    Ok(best)
}

/// Smooth part of the objective (mean loss, no penalty). `y` holds labels
/// as in the fit; classes map to rows of `m.w` through `m.classes`.
pub fn smooth_loss(m: &ProbeModel, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
    let yi = class_positions(m, x, y)?;
    Ok(match m.kind {
        ProbeKind::LogReg => logreg::loss(x, &yi, &m.w, &m.b),
        ProbeKind::LinearSvm => svm::loss(x, &yi, &m.w, &m.b),
    })
}

/// Gradient of [`smooth_loss`] with respect to W and b.
pub fn smooth_gradient(
    m: &ProbeModel,
    x: &DMatrix<f64>,
    y: &[usize],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let yi = class_positions(m, x, y)?;
    Ok(match m.kind {
        ProbeKind::LogReg => logreg::gradient(x, &yi, &m.w, &m.b),
        ProbeKind::LinearSvm => svm::gradient(x, &yi, &m.w, &m.b),
    })
}

/// Penalized objective at the model's own lambda.
pub fn objective(m: &ProbeModel, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
    Ok(smooth_loss(m, x, y)? + m.lambda * m.w.iter().map(|v| v.abs()).sum::<f64>())
}

fn class_positions(m: &ProbeModel, x: &DMatrix<f64>, y: &[usize]) -> Result<Vec<usize>> {
    if x.nrows() != y.len() || x.ncols() != m.w.ncols() {
        return Err(Error::validation(
            "design matrix does not match labels or model",
        ));
    }
    y.iter()
        .map(|l| {
            m.classes
                .binary_search(l)
                .map_err(|_| Error::validation(format!("label {l} unknown to the model")))
        })
        .collect()
}

/// Largest violation of the L1 optimality conditions given the smooth
/// gradient: zero coefficients need |g| ≤ λ, nonzero ones g + λ·sign(w) = 0,
/// intercepts g = 0.
pub(crate) fn kkt_from_gradient(
    g: &(DMatrix<f64>, DVector<f64>),
    w: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let (gw, gb) = g;
    let mut worst = gb.amax();
    for (gv, wv) in gw.iter().zip(w.iter()) {
        let v = if *wv == 0.0 {
            (gv.abs() - lambda).max(0.0)
        } else {
            (gv + lambda * wv.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

pub fn fit_l1_logreg(
    x: &DMatrix<f64>,
    y: &[usize],
    lambda: f64,
    opts: &SolverOptions,
) -> Result<ProbeModel> {
    fit_probe(ProbeKind::LogReg, x, y, lambda, opts, None)
}

pub fn fit_l1_svm(
    x: &DMatrix<f64>,
    y: &[usize],
    lambda: f64,
    opts: &SolverOptions,
) -> Result<ProbeModel> {
    fit_probe(ProbeKind::LinearSvm, x, y, lambda, opts, None)
}

/// Fit either probe. `warm` supplies starting coefficients from a fit on
/// the same data and classes.
pub fn fit_probe(
    kind: ProbeKind,
    x: &DMatrix<f64>,
    y: &[usize],
    lambda: f64,
    opts: &SolverOptions,
    warm: Option<&ProbeModel>,
) -> Result<ProbeModel> {
    check_inputs(x, y, lambda)?;
    let (classes, yi) = encode_classes(y);
    let warm = warm.filter(|m| m.classes == classes && m.w.ncols() == x.ncols() && m.kind == kind);
    let (w, b, info) = match kind {
        ProbeKind::LogReg => logreg::solve(
            x,
            &yi,
            classes.len(),
            lambda,
            opts,
            warm.map(|m| (&m.w, &m.b)),
        ),
        ProbeKind::LinearSvm => svm::solve(
            x,
            &yi,
            classes.len(),
            lambda,
            opts,
            warm.map(|m| (&m.w, &m.b)),
        ),
    };
    if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!(
            "{kind} probe diverged at lambda {lambda}"
        )));
    }
    if !info.converged {
        log::warn!(
            "{kind} probe at lambda {lambda:.3e} stopped after {} sweeps with violation {:.2e}",
            info.sweeps,
            info.kkt_violation
        );
    }
    Ok(ProbeModel {
        kind,
        classes,
        w,
        b,
        lambda,
        info,
    })
}
