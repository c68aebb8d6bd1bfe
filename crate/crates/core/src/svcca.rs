//! SVCCA between representation subsets and single feature-probability
//! columns, plus softmax relative weights.
//!
//! With a one-dimensional second view the first canonical correlation is
//! the multiple correlation of y on the kept SVD directions of X, so the
//! whitened cross-covariance reduces to a sum over singular directions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::corpus::{AccentLabel, PhoneToken};
use crate::error::{Error, Result};
use crate::table::{fmt_f, Table};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaConfig {
    /// Fraction of total variance the truncated SVD keeps.
    pub variance_kept: f64,
    /// Added to the scatter of each view before whitening.
    pub ridge: f64,
}

impl Default for CcaConfig {
    fn default() -> Self {
        CcaConfig {
            variance_kept: 0.99,
            ridge: 1e-8,
        }
    }
}

impl CcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_kept > 0.0 && self.variance_kept <= 1.0) {
            return Err(Error::validation("variance_kept must be in (0, 1]"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::validation("ridge must be finite and non-negative"));
        }
        Ok(())
    }
}

fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let m = col.sum() / n;
        col.add_scalar_mut(-m);
    }
    c
}

/// Centered X reduced to its leading singular directions: returns the
/// singular values and left singular vectors that are kept.
pub fn truncate(x: &DMatrix<f64>, variance_kept: f64) -> (Vec<f64>, DMatrix<f64>) {
    let xc = center_columns(x);
    if xc.ncols() == 0 || xc.nrows() == 0 {
        return (Vec::new(), DMatrix::zeros(x.nrows(), 0));
    }
    let svd = xc.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let top = svd.singular_values[order[0]];
    let mut kept = Vec::new();
    let mut acc = 0.0;
    for &i in &order {
        let s = svd.singular_values[i];
        // directions at rounding level carry no variance
        if total <= 0.0 || s <= top * 1e-12 || acc >= variance_kept * total {
            break;
        }
        acc += s * s;
        kept.push(i);
    }
    let sv = kept.iter().map(|&i| svd.singular_values[i]).collect();
    let uk = DMatrix::from_fn(x.nrows(), kept.len(), |r, c| u[(r, kept[c])]);
    (sv, uk)
}

/// First canonical correlation between X (after centering and SVD
/// truncation) and the single column y, clipped to [0, 1].
pub fn svcca_corr(x: &DMatrix<f64>, y: &[f64], cfg: &CcaConfig) -> Result<f64> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::validation(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite input to SVCCA"));
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - my));
    let yy = yc.norm_squared();
    if yy.sqrt() <= 1e-12 * n.sqrt() {
        return Err(Error::validation("constant feature probabilities"));
    }
    if x.ncols() == 0 {
        // an empty probe selection explains nothing
        return Ok(0.0);
    }
    let (s, u) = truncate(x, cfg.variance_kept);
    // centering costs one degree of freedom; with none left over the fit
    // is exact and the correlation is trivially 1
    if s.len() + 2 > y.len() {
        return Err(Error::validation(format!(
            "{} samples are too few for {} kept SVD directions",
            y.len(),
            s.len()
        )));
    }
    // kept coordinates are U_r S_r; they are orthogonal, so the whitened
    // cross-covariance is diagonal
    let proj = u.transpose() * &yc;
    let num: f64 = s
        .iter()
        .zip(proj.iter())
        .map(|(si, pi)| {
            let c = si * pi;
            c * c / (si * si + cfg.ridge)
        })
        .sum();
    let rho2 = (num / (yy + cfg.ridge)).clamp(0.0, 1.0);
    Ok(rho2.sqrt())
}

/// Softmax over one table of correlations.
pub fn softmax(rho: &[f64]) -> Vec<f64> {
    let m = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = rho.iter().map(|r| (r - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Ratios of subset to baseline softmax weights, feature by feature.
pub fn relative_weights(
    subset: &[(String, f64)],
    baseline: &[(String, f64)],
) -> Result<Vec<(String, f64)>> {
    let names = |t: &[(String, f64)]| t.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    if names(subset) != names(baseline) {
        return Err(Error::validation(format!(
            "feature lists differ: {:?} vs {:?}",
            names(subset),
            names(baseline)
        )));
    }
    if subset.is_empty() {
        return Ok(Vec::new());
    }
    let ws = softmax(&subset.iter().map(|p| p.1).collect::<Vec<_>>());
    let wb = softmax(&baseline.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(subset
        .iter()
        .zip(ws.iter().zip(&wb))
        .map(|((n, _), (s, b))| (n.clone(), s / b))
        .collect())
}

/// Which tokens and columns the accent-agnostic baseline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaselineMode {
    /// All tokens, full representation.
    #[default]
    Pooled,
    /// Same accent's tokens, full representation.
    AccentFiltered,
}

impl std::str::FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pooled" => Ok(BaselineMode::Pooled),
            "accent_filtered" | "accent-filtered" => Ok(BaselineMode::AccentFiltered),
            other => Err(Error::validation(format!(
                "unknown baseline mode {other:?}"
            ))),
        }
    }
}

/// One correlation per feature for the rows in `rows`, using columns
/// `cols` of `x`. Features whose probabilities are constant on those rows,
/// or groups too small for the kept rank, yield `None`.
pub fn feature_correlations(
    x: &DMatrix<f64>,
    cols: &[usize],
    rows: &[usize],
    profiles: &DMatrix<f64>,
    features: &[usize],
    cfg: &CcaConfig,
) -> Result<Vec<Option<f64>>> {
    if x.nrows() != profiles.nrows() {
        return Err(Error::validation("representation and profile rows differ"));
    }
    let xs = x.select_rows(rows).select_columns(cols);
    features
        .iter()
        .map(|&f| {
            let y: Vec<f64> = rows.iter().map(|&i| profiles[(i, f)]).collect();
            match svcca_corr(&xs, &y, cfg) {
                Ok(r) => Ok(Some(r)),
                Err(Error::Validation(m)) => {
                    log::warn!("feature column {f}: {m}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Inputs for one (segment, representation, probe) analysis cell.
pub struct CcaInput<'a> {
    pub segment: &'a str,
    pub representation: &'a str,
    pub probe: &'a str,
    pub tokens: &'a [PhoneToken],
    /// tokens × dim at the probe's best layer
    pub full: &'a DMatrix<f64>,
    pub selected: &'a [usize],
    /// tokens × 26
    pub profiles: &'a DMatrix<f64>,
    /// (name, column in `profiles`) in report order
    pub features: &'a [(String, usize)],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub segment: String,
    pub representation: String,
    pub probe: String,
    /// Accent level name, or "baseline".
    pub accent: String,
    pub feature: String,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub segment: String,
    pub representation: String,
    pub probe: String,
    pub accent: String,
    pub feature: String,
    pub ratio: f64,
}

pub const BASELINE: &str = "baseline";

/// Correlations for every accent level and the baseline, and relative
/// weights for each accent level. Features undefined in either table of a
/// pair are left out of that pair's softmax.
pub fn analyze(
    input: &CcaInput,
    mode: BaselineMode,
    cfg: &CcaConfig,
) -> Result<(Vec<CorrelationRow>, Vec<WeightRow>)> {
    let n = input.tokens.len();
    if input.full.nrows() != n || input.profiles.nrows() != n {
        return Err(Error::validation(
            "analysis inputs are not aligned with tokens",
        ));
    }
    let all_cols: Vec<usize> = (0..input.full.ncols()).collect();
    let fcols: Vec<usize> = input.features.iter().map(|f| f.1).collect();
    let row = |accent: &str, feature: &str, rho| CorrelationRow {
        segment: input.segment.into(),
        representation: input.representation.into(),
        probe: input.probe.into(),
        accent: accent.into(),
        feature: feature.into(),
        rho,
    };
    let mut corr = Vec::new();
    let mut weights = Vec::new();

    let all_rows: Vec<usize> = (0..n).collect();
    let pooled = feature_correlations(
        input.full,
        &all_cols,
        &all_rows,
        input.profiles,
        &fcols,
        cfg,
    )?;
    for (f, r) in input.features.iter().zip(&pooled) {
        corr.push(row(BASELINE, &f.0, *r));
    }
    for accent in AccentLabel::ALL {
        let rows: Vec<usize> = (0..n)
            .filter(|&i| input.tokens[i].accent == accent)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let sub = feature_correlations(
            input.full,
            input.selected,
            &rows,
            input.profiles,
            &fcols,
            cfg,
        )?;
        let base = match mode {
            BaselineMode::Pooled => pooled.clone(),
            BaselineMode::AccentFiltered => {
                feature_correlations(input.full, &all_cols, &rows, input.profiles, &fcols, cfg)?
            }
        };
        let mut ps = Vec::new();
        let mut pb = Vec::new();
        for ((f, s), b) in input.features.iter().zip(&sub).zip(&base) {
            corr.push(row(accent.as_str(), &f.0, *s));
            if let (Some(s), Some(b)) = (s, b) {
                ps.push((f.0.clone(), *s));
                pb.push((f.0.clone(), *b));
            }
        }
        for (feature, ratio) in relative_weights(&ps, &pb)? {
            weights.push(WeightRow {
                segment: input.segment.into(),
                representation: input.representation.into(),
                probe: input.probe.into(),
                accent: accent.as_str().into(),
                feature,
                ratio,
            });
        }
    }
    Ok((corr, weights))
}

pub fn correlation_table(rows: &[CorrelationRow]) -> Table {
    let mut t = Table::new(&[
        "segment",
        "representation",
        "probe",
        "accent",
        "feature",
        "rho",
    ]);
    for r in rows {
        t.push(vec![
            r.segment.clone(),
            r.representation.clone(),
            r.probe.clone(),
            r.accent.clone(),
            r.feature.clone(),
            r.rho.map_or("NA".into(), |v| fmt_f(v, 3)),
        ]);
    }
    t
}

/// Relative weights with a reference row of 1 per feature and group.
pub fn weight_table(rows: &[WeightRow]) -> Table {
    let mut t = Table::new(&[
        "segment",
        "representation",
        "probe",
        "accent",
        "feature",
        "relative_weight",
    ]);
    let mut reference: BTreeMap<(String, String, String), Vec<String>> = BTreeMap::new();
    for r in rows {
        let feats = reference
            .entry((r.segment.clone(), r.representation.clone(), r.probe.clone()))
            .or_default();
        if !feats.contains(&r.feature) {
            feats.push(r.feature.clone());
        }
    }
    for ((s, rep, p), feats) in &reference {
        for f in feats {
            t.push(vec![
                s.clone(),
                rep.clone(),
                p.clone(),
                BASELINE.into(),
                f.clone(),
                fmt_f(1.0, 4),
            ]);
        }
    }
    for r in rows {
        t.push(vec![
            r.segment.clone(),
            r.representation.clone(),
            r.probe.clone(),
            r.accent.clone(),
            r.feature.clone(),
            fmt_f(r.ratio, 4),
        ]);
    }
    t
}
