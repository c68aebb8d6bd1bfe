use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::metrics::{stratified_folds, stratified_split, weighted_f1};
use super::{
    fit_probe, lambda_max, select_features, ProbeKind, ProbeModel, SolverOptions, Standardizer,
};
use crate::corpus::PhoneToken;
use crate::error::{Error, Result};
use crate::repstore::{segment_matrix, RepStore};

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaGrid {
    /// `n` log-spaced values from lambda_max down to `min_ratio * lambda_max`.
    Auto {
        n: usize,
        min_ratio: f64,
    },
    Explicit(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Auto {
            n: 20,
            min_ratio: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub lambda_grid: LambdaGrid,
    pub cv_folds: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            kind: ProbeKind::LogReg,
            lambda_grid: LambdaGrid::default(),
            cv_folds: 5,
            test_fraction: 0.2,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.lambda_grid {
            LambdaGrid::Auto { n, min_ratio } => {
                if *n == 0 || !(*min_ratio > 0.0 && *min_ratio <= 1.0) {
                    return Err(Error::validation(
                        "lambda grid needs n ≥ 1 and min_ratio in (0, 1]",
                    ));
                }
            }
            LambdaGrid::Explicit(v) => {
                if v.is_empty() || v.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(Error::validation(
                        "explicit lambda grid must be non-empty and positive",
                    ));
                }
            }
        }
        if self.cv_folds < 2 {
            return Err(Error::validation("cv_folds must be at least 2"));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::validation(
                "solver tolerance and max_iter must be positive",
            ));
        }
        Ok(())
    }
}

/// Grid values in descending order.
pub fn lambda_grid(grid: &LambdaGrid, lambda_max: f64) -> Vec<f64> {
    match grid {
        LambdaGrid::Explicit(v) => {
            let mut v = v.clone();
            v.sort_by(|a, b| b.total_cmp(a));
            v.dedup();
            v
        }
        LambdaGrid::Auto { .. } if lambda_max <= 0.0 => vec![0.0],
        LambdaGrid::Auto { n: 1, .. } => vec![lambda_max],
        LambdaGrid::Auto { n, min_ratio } => (0..*n)
            .map(|i| lambda_max * min_ratio.powf(i as f64 / (*n - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    /// Descending.
    pub grid: Vec<f64>,
    /// Mean validation weighted F1 per grid value.
    pub cv_f1: Vec<f64>,
    pub best_index: usize,
    pub best_lambda: f64,
}

/// Fit a whole descending path with warm starts.
fn fit_path(
    kind: ProbeKind,
    x: &DMatrix<f64>,
    y: &[usize],
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<ProbeModel>> {
    let mut out: Vec<ProbeModel> = Vec::with_capacity(grid.len());
    for &l in grid {
        let m = fit_probe(kind, x, y, l, opts, out.last())?;
        out.push(m);
    }
    Ok(out)
}

/// Choose lambda by stratified k-fold CV on weighted F1. The grid comes
/// from lambda_max of the standardized input; each fold is standardized
/// with its own training statistics. Ties go to the larger lambda.
pub fn cv_select(x: &DMatrix<f64>, y: &[usize], cfg: &ProbeConfig) -> Result<CvOutcome> {
    cfg.validate()?;
    let z = Standardizer::fit(x).transform(x);
    let grid = lambda_grid(&cfg.lambda_grid, lambda_max(cfg.kind, &z, y)?);
    let folds = stratified_folds(y, cfg.cv_folds, cfg.seed)?;
    let per_fold: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|(tr, va)| {
            let xtr = x.select_rows(tr);
            let ytr: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
            let yva: Vec<usize> = va.iter().map(|&i| y[i]).collect();
            let s = Standardizer::fit(&xtr);
            let xva = s.transform(&x.select_rows(va));
            let path = fit_path(cfg.kind, &s.transform(&xtr), &ytr, &grid, &cfg.solver)?;
            Ok(path
                .iter()
                .map(|m| weighted_f1(&yva, &m.predict(&xva)))
                .collect())
        })
        .collect::<Result<_>>()?;
    let cv_f1: Vec<f64> = (0..grid.len())
        .map(|i| per_fold.iter().map(|f| f[i]).sum::<f64>() / per_fold.len() as f64)
        .collect();
    let mut best_index = 0;
    for i in 1..grid.len() {
        if cv_f1[i] > cv_f1[best_index] + 1e-9 {
            best_index = i;
        }
    }
    Ok(CvOutcome {
        best_lambda: grid[best_index],
        grid,
        cv_f1,
        best_index,
    })
}

/// Anything that can produce a token × dim segment matrix per layer.
pub trait LayerSource: Sync {
    fn n_layers(&self) -> usize;
    fn segment_matrix(&self, layer: usize, tokens: &[PhoneToken]) -> Result<DMatrix<f64>>;
}

impl LayerSource for RepStore {
    fn n_layers(&self) -> usize {
        RepStore::n_layers(self)
    }

    fn segment_matrix(&self, layer: usize, tokens: &[PhoneToken]) -> Result<DMatrix<f64>> {
        segment_matrix(self, tokens, layer)
    }
}

/// Precomputed segment matrices whose rows already follow the token order.
#[derive(Debug, Clone, PartialEq)]
pub struct InMemoryLayers {
    pub layers: Vec<DMatrix<f64>>,
}

impl LayerSource for InMemoryLayers {
    fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn segment_matrix(&self, layer: usize, tokens: &[PhoneToken]) -> Result<DMatrix<f64>> {
        let m = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::validation(format!("layer {layer} out of range")))?;
        if m.nrows() != tokens.len() {
            return Err(Error::validation(format!(
                "layer {layer} has {} rows for {} tokens",
                m.nrows(),
                tokens.len()
            )));
        }
        Ok(m.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerScore {
    pub layer: usize,
    /// Held-out weighted F1, percent.
    pub f1: f64,
    pub lambda: f64,
    pub cv_f1: f64,
    pub n_selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub kind: ProbeKind,
    pub per_layer: Vec<LayerScore>,
    pub best_layer: usize,
    pub selected_features: BTreeSet<usize>,
    /// Model for the best layer, on standardized inputs.
    pub model: ProbeModel,
    pub standardizer: Standardizer,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Score every layer: CV on the training split picks lambda, a final fit on
/// the whole training split is scored on the held-out split.
pub fn layer_sweep(
    source: &dyn LayerSource,
    tokens: &[PhoneToken],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    cfg.validate()?;
    if source.n_layers() == 0 {
        return Err(Error::validation("representation source has no layers"));
    }
    let y: Vec<usize> = tokens.iter().map(|t| t.accent.index()).collect();
    let (train, test) = stratified_split(&y, cfg.test_fraction, cfg.seed)?;
    let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let yte: Vec<usize> = test.iter().map(|&i| y[i]).collect();

    let fits: Vec<(LayerScore, ProbeModel, Standardizer)> = (0..source.n_layers())
        .into_par_iter()
        .map(|layer| {
            let x = source.segment_matrix(layer, tokens)?;
            let xtr = x.select_rows(&train);
            let cv = cv_select(&xtr, &ytr, cfg)?;
            let s = Standardizer::fit(&xtr);
            let model = fit_probe(
                cfg.kind,
                &s.transform(&xtr),
                &ytr,
                cv.best_lambda,
                &cfg.solver,
                None,
            )?;
            let pred = model.predict(&s.transform(&x.select_rows(&test)));
            let score = LayerScore {
                layer,
                f1: weighted_f1(&yte, &pred),
                lambda: cv.best_lambda,
                cv_f1: cv.cv_f1[cv.best_index],
                n_selected: select_features(&model, 0.0).len(),
            };
            Ok((score, model, s))
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, (s, _, _)) in fits.iter().enumerate() {
        if s.f1 > fits[best].0.f1 {
            best = i;
        }
    }
    let (_, model, standardizer) = fits[best].clone();
    Ok(ProbeResult {
        kind: cfg.kind,
        per_layer: fits.into_iter().map(|f| f.0).collect(),
        best_layer: best,
        selected_features: select_features(&model, 0.0),
        model,
        standardizer,
        train_idx: train,
        test_idx: test,
    })
}
