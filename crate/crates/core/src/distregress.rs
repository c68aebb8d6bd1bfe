//! Distances from segment vectors to native and non-native baseline banks,
//! and multinomial logistic regression of accent ratings on them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::{AccentLabel, PhoneToken, Position};
use crate::error::{Error, Result};
use crate::synth;
use crate::table::{fmt_f, Table};

pub const DEFAULT_BANK_CAP: usize = 2000;

/// Fitted log-odds beyond this magnitude mean some probability is 0 or 1
/// at double precision, so the MLE is running off to infinity.
pub const SEPARATION_BOUND: f64 = 35.0;

const GRAD_TOL: f64 = 1e-8;
/// Largest Newton step component accepted as converged.
const STEP_TOL: f64 = 1e-6;
const MAX_NEWTON: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variety {
    Ae,
    Ie,
}

impl Variety {
    pub fn as_str(self) -> &'static str {
        match self {
            Variety::Ae => "AE",
            Variety::Ie => "IE",
        }
    }
}

impl fmt::Display for Variety {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variety {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AE" => Ok(Variety::Ae),
            "IE" => Ok(Variety::Ie),
            other => Err(Error::validation(format!("unknown variety {other:?}"))),
        }
    }
}

/// Baseline segment vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineBank {
    pub variety: Variety,
    pub segment: String,
    pub vectors: DMatrix<f64>,
}

impl BaselineBank {
    pub fn new(
        variety: Variety,
        segment: impl Into<String>,
        vectors: DMatrix<f64>,
    ) -> Result<Self> {
        let segment = segment.into();
        if vectors.nrows() == 0 {
            return Err(Error::validation(format!(
                "empty {variety} baseline bank for {segment}"
            )));
        }
        Ok(BaselineBank {
            variety,
            segment,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Uniform subsample without replacement, rows kept in original order.
    /// `None` or a cap at or above the bank size returns the bank unchanged.
    pub fn capped(&self, cap: Option<usize>, seed: u64) -> BaselineBank {
        match cap {
            Some(c) if c < self.len() => {
                let mut r = synth::rng(seed);
                let mut idx = sample(&mut r, self.len(), c.max(1)).into_vec();
                idx.sort_unstable();
                BaselineBank {
                    variety: self.variety,
                    segment: self.segment.clone(),
                    vectors: self.vectors.select_rows(&idx),
                }
            }
            _ => self.clone(),
        }
    }
}

/// Mean Euclidean distance from `v` to the (possibly subsampled) bank.
pub fn average_distance(
    v: &[f64],
    bank: &BaselineBank,
    cap: Option<usize>,
    seed: u64,
) -> Result<f64> {
    if bank.is_empty() {
        return Err(Error::validation("empty baseline bank"));
    }
    if v.len() != bank.dim() {
        return Err(Error::validation(format!(
            "vector dim {} does not match bank dim {}",
            v.len(),
            bank.dim()
        )));
    }
    let b = bank.capped(cap, seed);
    Ok(mean_distance(v, &b.vectors))
}

fn mean_distance(v: &[f64], rows: &DMatrix<f64>) -> f64 {
    let total: f64 = (0..rows.nrows())
        .map(|i| {
            v.iter()
                .enumerate()
                .map(|(j, x)| (x - rows[(i, j)]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / rows.nrows() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRecord {
    pub token: PhoneToken,
    pub d_ae: f64,
    pub d_ie: f64,
    pub z_ae: f64,
    pub z_ie: f64,
}

impl DistanceRecord {
    pub fn position(&self) -> Position {
        self.token.position
    }

    pub fn accent(&self) -> AccentLabel {
        self.token.accent
    }
}

/// z-scores with the sample standard deviation; a constant column maps to 0.
pub fn zscore(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    if v.is_empty() {
        return Vec::new();
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    v.iter()
        .map(|x| if sd > 1e-12 { (x - mean) / sd } else { 0.0 })
        .collect()
}

/// Distances from every token vector (rows of `vectors`) to both banks.
/// Each bank is subsampled once with `seed`, then distances are computed in
/// parallel and z-scored over the whole set.
pub fn compute_distances(
    tokens: &[PhoneToken],
    vectors: &DMatrix<f64>,
    ae: &BaselineBank,
    ie: &BaselineBank,
    cap: Option<usize>,
    seed: u64,
) -> Result<Vec<DistanceRecord>> {
    if tokens.len() != vectors.nrows() {
        return Err(Error::validation(format!(
            "{} tokens but {} vectors",
            tokens.len(),
            vectors.nrows()
        )));
    }
    for bank in [ae, ie] {
        if bank.is_empty() {
            return Err(Error::validation(format!(
                "empty {} baseline bank",
                bank.variety
            )));
        }
        if bank.dim() != vectors.ncols() {
            return Err(Error::validation(format!(
                "{} bank dim {} does not match vector dim {}",
                bank.variety,
                bank.dim(),
                vectors.ncols()
            )));
        }
    }
    let ae = ae.capped(cap, seed);
    let ie = ie.capped(cap, seed.wrapping_add(1));
    let raw: Vec<(f64, f64)> = (0..tokens.len())
        .into_par_iter()
        .map(|i| {
            let v: Vec<f64> = vectors.row(i).iter().copied().collect();
            (
                mean_distance(&v, &ae.vectors),
                mean_distance(&v, &ie.vectors),
            )
        })
        .collect();
    let za = zscore(&raw.iter().map(|r| r.0).collect::<Vec<_>>());
    let zi = zscore(&raw.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(tokens
        .iter()
        .zip(raw)
        .enumerate()
        .map(|(i, (t, (a, b)))| DistanceRecord {
            token: t.clone(),
            d_ae: a,
            d_ie: b,
            z_ae: za[i],
            z_ie: zi[i],
        })
        .collect())
}

const DISTANCE_COLUMNS: [&str; 11] = [
    "utterance_id",
    "phone",
    "word_id",
    "position",
    "t_start",
    "t_end",
    "accent",
    "d_ae",
    "d_ie",
    "z_ae",
    "z_ie",
];

pub fn distance_table(records: &[DistanceRecord]) -> Table {
    let mut t = Table::new(&DISTANCE_COLUMNS);
    for r in records {
        t.push(vec![
            r.token.utterance_id.clone(),
            r.token.phone.clone(),
            r.token.word_id.clone(),
            r.token.position.to_string(),
            r.token.t_start.to_string(),
            r.token.t_end.to_string(),
            r.token.accent.to_string(),
            fmt_f(r.d_ae, 8),
            fmt_f(r.d_ie, 8),
            fmt_f(r.z_ae, 8),
            fmt_f(r.z_ie, 8),
        ]);
    }
    t
}

/// Inverse of [`distance_table`] restricted to `rows`; extra columns are ignored.
pub fn records_from_table(t: &Table, rows: &[usize]) -> Result<Vec<DistanceRecord>> {
    let idx: Vec<usize> = DISTANCE_COLUMNS
        .iter()
        .map(|c| t.require(c))
        .collect::<Result<_>>()?;
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::validation(format!("bad number {s:?} in distance table")))
    };
    rows.iter()
        .map(|&i| {
            let r = &t.rows[i];
            Ok(DistanceRecord {
                token: PhoneToken {
                    utterance_id: r[idx[0]].clone(),
                    phone: r[idx[1]].clone(),
                    word_id: r[idx[2]].clone(),
                    position: r[idx[3]].parse()?,
                    t_start: num(&r[idx[4]])?,
                    t_end: num(&r[idx[5]])?,
                    accent: r[idx[6]].parse()?,
                },
                d_ae: num(&r[idx[7]])?,
                d_ie: num(&r[idx[8]])?,
                z_ae: num(&r[idx[9]])?,
                z_ie: num(&r[idx[10]])?,
            })
        })
        .collect()
}

pub const INTERCEPT: &str = "(Intercept)";
pub const TERMS: [&str; 8] = [
    "d_AE",
    "d_IE",
    "Medial",
    "Final",
    "d_AE:Medial",
    "d_AE:Final",
    "d_IE:Medial",
    "d_IE:Final",
];

/// Which columns enter the design. The default is the full interaction
/// model on z-scored distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    pub main_effects: bool,
    pub interactions: bool,
    pub standardize: bool,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            main_effects: true,
            interactions: true,
            standardize: true,
        }
    }
}

impl RegressionSpec {
    pub fn intercept_only() -> Self {
        RegressionSpec {
            main_effects: false,
            interactions: false,
            standardize: true,
        }
    }

    pub fn term_names(&self) -> Vec<&'static str> {
        let mut v = vec![INTERCEPT];
        if self.main_effects {
            v.extend_from_slice(&TERMS[..4]);
        }
        if self.interactions {
            v.extend_from_slice(&TERMS[4..]);
        }
        v
    }
}

/// Design matrix with an intercept column followed by [`RegressionSpec::term_names`].
pub fn design_matrix(records: &[DistanceRecord], spec: &RegressionSpec) -> DMatrix<f64> {
    let names = spec.term_names();
    DMatrix::from_fn(records.len(), names.len(), |i, j| {
        let r = &records[i];
        let (a, e) = if spec.standardize {
            (r.z_ae, r.z_ie)
        } else {
            (r.d_ae, r.d_ie)
        };
        let med = (r.token.position == Position::Medial) as u8 as f64;
        let fin = (r.token.position == Position::Final) as u8 as f64;
        match names[j] {
            "d_AE" => a,
            "d_IE" => e,
            "Medial" => med,
            "Final" => fin,
            "d_AE:Medial" => a * med,
            "d_AE:Final" => a * fin,
            "d_IE:Medial" => e * med,
            "d_IE:Final" => e * fin,
            _ => 1.0,
        }
    })
}

/// Maximum-likelihood multinomial logit with class 0 as reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialFit {
    pub terms: Vec<String>,
    /// (K-1) × p, row c is the log-odds of class c+1 against class 0
    pub coef: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub log_likelihood: f64,
    pub n: usize,
    pub iterations: usize,
}

impl MultinomialFit {
    /// Class probabilities for each design row, n × K.
    pub fn probabilities(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        probabilities(x, &self.coef)
    }
}

pub fn probabilities(x: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let eta = x * beta.transpose();
    let (n, k1) = eta.shape();
    let mut p = DMatrix::zeros(n, k1 + 1);
    for i in 0..n {
        let m = eta.row(i).iter().copied().fold(0.0, f64::max);
        let mut z = (-m).exp();
        for c in 0..k1 {
            z += (eta[(i, c)] - m).exp();
        }
        p[(i, 0)] = (-m).exp() / z;
        for c in 0..k1 {
            p[(i, c + 1)] = (eta[(i, c)] - m).exp() / z;
        }
    }
    p
}

pub fn log_likelihood(x: &DMatrix<f64>, y: &[usize], beta: &DMatrix<f64>) -> f64 {
    let eta = x * beta.transpose();
    let mut ll = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let m = eta.row(i).iter().copied().fold(0.0, f64::max);
        let lse = m + ((-m).exp() + eta.row(i).iter().map(|e| (e - m).exp()).sum::<f64>()).ln();
        let own = if yi == 0 { 0.0 } else { eta[(i, yi - 1)] };
        ll += own - lse;
    }
    ll
}

/// Gradient of the log-likelihood, same shape as `beta`.
pub fn gradient(x: &DMatrix<f64>, y: &[usize], beta: &DMatrix<f64>) -> DMatrix<f64> {
    let p = probabilities(x, beta);
    let (n, k) = p.shape();
    let r = DMatrix::from_fn(n, k - 1, |i, c| {
        (y[i] == c + 1) as u8 as f64 - p[(i, c + 1)]
    });
    r.transpose() * x
}

/// Negative Hessian of the log-likelihood, parameters ordered class-major.
fn information(x: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let k1 = p.ncols() - 1;
    let mut h = DMatrix::zeros(k1 * d, k1 * d);
    for c in 0..k1 {
        for e in c..k1 {
            let w = DVector::from_fn(n, |i, _| {
                let pc = p[(i, c + 1)];
                pc * ((c == e) as u8 as f64 - p[(i, e + 1)])
            });
            let xw = DMatrix::from_fn(n, d, |i, j| x[(i, j)] * w[i]);
            let block = x.transpose() * xw;
            h.view_mut((c * d, e * d), (d, d)).copy_from(&block);
            if c != e {
                h.view_mut((e * d, c * d), (d, d))
                    .copy_from(&block.transpose());
            }
        }
    }
    h
}

/// First column that is (numerically) a linear combination of the ones
/// before it, by Gram-Schmidt on the design.
fn collinear_column(x: &DMatrix<f64>) -> Option<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        for q in &basis {
            let a = q.dot(&r);
            r -= q * a;
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-9 * norm.max(1.0) {
            return Some(j);
        }
        basis.push(r / rn);
    }
    None
}

/// Fits by damped Newton from zero. `y` holds class indices in 0..k with 0
/// as the reference, `x` includes any intercept column.
pub fn fit_multinomial_design(
    x: &DMatrix<f64>,
    y: &[usize],
    k: usize,
    terms: &[String],
) -> Result<MultinomialFit> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::validation(format!(
            "{} outcomes for {n} design rows",
            y.len()
        )));
    }
    if terms.len() != d {
        return Err(Error::validation("term names do not match design columns"));
    }
    if k < 2 {
        return Err(Error::validation("need at least 2 outcome levels"));
    }
    let mut counts = vec![0usize; k];
    for &c in y {
        if c >= k {
            return Err(Error::validation(format!("outcome {c} out of range")));
        }
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&m| m == 0) {
        return Err(Error::validation(format!(
            "outcome level {c} has no observations"
        )));
    }
    if let Some(j) = collinear_column(x) {
        return Err(Error::numerical(format!(
            "singular information matrix: column {:?} is constant zero or collinear with earlier columns",
            terms[j]
        )));
    }
    let k1 = k - 1;
    let mut beta = DMatrix::zeros(k1, d);
    let mut ll = log_likelihood(x, y, &beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_NEWTON {
        let g = gradient(x, y, &beta);
        let p = probabilities(x, &beta);
        let h = information(x, &p);
        let gv = DVector::from_iterator(
            k1 * d,
            (0..k1)
                .flat_map(|c| (0..d).map(move |j| (c, j)))
                .map(|(c, j)| g[(c, j)]),
        );
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&gv),
            None => {
                return Err(Error::numerical(
                    "quasi-complete separation: information matrix lost positive definiteness",
                ))
            }
        };
        // under separation the gradient vanishes but the Newton step does not
        if g.norm() <= GRAD_TOL && step.amax() <= STEP_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = DMatrix::from_fn(k1, d, |c, j| beta[(c, j)] + t * step[c * d + j]);
            let l = log_likelihood(x, y, &cand);
            if l >= ll - 1e-12 * ll.abs() {
                beta = cand;
                ll = l;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (x * beta.transpose()).amax() > SEPARATION_BOUND {
            return Err(Error::numerical(format!(
                "quasi-complete separation: a fitted log-odds passed {SEPARATION_BOUND}, probabilities are numerically 0 or 1"
            )));
        }
        if !accepted {
            // no ascent direction left at working precision
            converged = gradient(x, y, &beta).norm() <= GRAD_TOL * (n as f64);
            break;
        }
    }
    if !converged {
        let gn = gradient(x, y, &beta).norm();
        if gn > GRAD_TOL * (n as f64) {
            return Err(Error::numerical(format!(
                "quasi-complete separation: Newton did not converge (gradient norm {gn:.3e})"
            )));
        }
    }
    let p = probabilities(x, &beta);
    let h = information(x, &p);
    let cov = h
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::numerical("singular information matrix at the optimum"))?;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let se = DMatrix::from_fn(k1, d, |c, j| cov[(c * d + j, c * d + j)].max(0.0).sqrt());
    let z = beta.zip_map(&se, |b, s| b / s);
    let pv = z.map(|v| (2.0 * normal.cdf(-v.abs())).clamp(0.0, 1.0));
    Ok(MultinomialFit {
        terms: terms.to_vec(),
        coef: beta,
        se,
        z,
        p: pv,
        log_likelihood: ll,
        n,
        iterations,
    })
}

/// Regression of accent ratings with no/negligible as the reference outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    /// Non-reference outcome levels, one per coefficient row.
    pub levels: Vec<AccentLabel>,
    pub fit: MultinomialFit,
}

impl RegressionResult {
    pub fn level_row(&self, level: AccentLabel) -> Option<usize> {
        self.levels.iter().position(|&l| l == level)
    }

    pub fn term_col(&self, term: &str) -> Option<usize> {
        self.fit.terms.iter().position(|t| t == term)
    }

    /// (β, SE, z, p) for one level and term.
    pub fn get(&self, level: AccentLabel, term: &str) -> Option<(f64, f64, f64, f64)> {
        let (r, c) = (self.level_row(level)?, self.term_col(term)?);
        let f = &self.fit;
        Some((f.coef[(r, c)], f.se[(r, c)], f.z[(r, c)], f.p[(r, c)]))
    }
}

pub fn fit_multinomial(
    records: &[DistanceRecord],
    spec: &RegressionSpec,
) -> Result<RegressionResult> {
    let present: Vec<AccentLabel> = AccentLabel::ALL
        .into_iter()
        .filter(|l| records.iter().any(|r| r.accent() == *l))
        .collect();
    if present.len() < 2 {
        return Err(Error::validation("need at least 2 outcome levels present"));
    }
    if present[0] != AccentLabel::NoNegligible {
        return Err(Error::validation(
            "reference level no_negligible has no observations",
        ));
    }
    let y: Vec<usize> = records
        .iter()
        .map(|r| present.iter().position(|&l| l == r.accent()).unwrap_or(0))
        .collect();
    let x = design_matrix(records, spec);
    let terms: Vec<String> = spec.term_names().iter().map(|s| s.to_string()).collect();
    let fit = fit_multinomial_design(&x, &y, present.len(), &terms)?;
    Ok(RegressionResult {
        levels: present[1..].to_vec(),
        fit,
    })
}

pub struct RegressionRun {
    pub segment: String,
    pub representation: String,
    pub result: RegressionResult,
}

/// Log-odds report: main effects always, interactions only when p < .05.
pub fn regression_table(results: &[RegressionRun]) -> Table {
    let mut t = Table::new(&[
        "segment",
        "representation",
        "accent",
        "effect",
        "beta",
        "se",
        "z",
        "p",
    ]);
    for RegressionRun {
        segment,
        representation,
        result: res,
    } in results
    {
        for (r, level) in res.levels.iter().enumerate() {
            for (c, term) in res.fit.terms.iter().enumerate() {
                if term == INTERCEPT {
                    continue;
                }
                let p = res.fit.p[(r, c)];
                if term.contains(':') && !(p < 0.05) {
                    continue;
                }
                t.push(vec![
                    segment.clone(),
                    representation.clone(),
                    level.to_string(),
                    term.clone(),
                    fmt_f(res.fit.coef[(r, c)], 3),
                    fmt_f(res.fit.se[(r, c)], 3),
                    fmt_f(res.fit.z[(r, c)], 3),
                    fmt_p(p),
                ]);
            }
        }
    }
    t
}

/// Every coefficient including intercepts and non-significant interactions.
pub fn coefficient_table(results: &[RegressionRun]) -> Table {
    let mut t = Table::new(&[
        "segment",
        "representation",
        "accent",
        "term",
        "beta",
        "se",
        "z",
        "p",
        "n",
        "log_likelihood",
    ]);
    for RegressionRun {
        segment,
        representation,
        result: res,
    } in results
    {
        for (r, level) in res.levels.iter().enumerate() {
            for (c, term) in res.fit.terms.iter().enumerate() {
                t.push(vec![
                    segment.clone(),
                    representation.clone(),
                    level.to_string(),
                    term.clone(),
                    fmt_f(res.fit.coef[(r, c)], 6),
                    fmt_f(res.fit.se[(r, c)], 6),
                    fmt_f(res.fit.z[(r, c)], 4),
                    fmt_p(res.fit.p[(r, c)]),
                    res.fit.n.to_string(),
                    fmt_f(res.fit.log_likelihood, 4),
                ]);
            }
        }
    }
    t
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        fmt_f(p, 4)
    }
}

/// First two principal-component scores of the pooled, centered rows.
pub fn project_2d(vectors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = vectors.shape();
    if n < 3 {
        return Err(Error::validation(format!(
            "projection needs at least 3 vectors, got {n}"
        )));
    }
    let mean = vectors.row_mean();
    let mut c = vectors.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    let svd = c.svd(true, false);
    let u = svd.u.as_ref().expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let mut out = DMatrix::zeros(n, 2);
    for (k, &j) in order.iter().take(2.min(d)).enumerate() {
        let s = svd.singular_values[j];
        for i in 0..n {
            out[(i, k)] = u[(i, j)] * s;
        }
    }
    Ok(out)
}

pub fn projection_table(tokens: &[PhoneToken], coords: &DMatrix<f64>, group: &str) -> Table {
    let mut t = Table::new(&["group", "utterance_id", "phone", "accent", "pc1", "pc2"]);
    for (i, tok) in tokens.iter().enumerate() {
        t.push(vec![
            group.to_string(),
            tok.utterance_id.clone(),
            tok.phone.clone(),
            tok.accent.to_string(),
            fmt_f(coords[(i, 0)], 6),
            fmt_f(coords[(i, 1)], 6),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(rows: &[&[f64]]) -> BaselineBank {
        let d = rows[0].len();
        BaselineBank::new(
            Variety::Ae,
            "t",
            DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
        )
        .unwrap()
    }

    #[test]
    fn three_four_five() {
        assert_eq!(
            average_distance(&[0.0, 0.0], &bank(&[&[3.0, 4.0]]), None, 0).unwrap(),
            5.0
        );
        assert_eq!(
            average_distance(&[1.0, 2.0], &bank(&[&[1.0, 2.0]]), None, 0).unwrap(),
            0.0
        );
    }

    #[test]
    fn empty_bank_and_dim_errors() {
        assert!(BaselineBank::new(Variety::Ie, "t", DMatrix::zeros(0, 3)).is_err());
        assert!(average_distance(&[0.0], &bank(&[&[3.0, 4.0]]), None, 0).is_err());
    }

    #[test]
    fn cap_subsamples_deterministically() {
        let b = BaselineBank::new(
            Variety::Ae,
            "t",
            DMatrix::from_fn(50, 2, |i, j| (i * 2 + j) as f64),
        )
        .unwrap();
        let a = b.capped(Some(10), 4);
        assert_eq!(a.len(), 10);
        assert_eq!(a, b.capped(Some(10), 4));
        assert_eq!(b.capped(Some(100), 4), b);
        assert_eq!(b.capped(None, 4), b);
    }

    #[test]
    fn intercept_only_matches_log_ratios() {
        let y: Vec<usize> = (0..60)
            .map(|i| {
                if i < 30 {
                    0
                } else if i < 50 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let x = DMatrix::from_element(60, 1, 1.0);
        let f = fit_multinomial_design(&x, &y, 3, &[INTERCEPT.to_string()]).unwrap();
        assert!((f.coef[(0, 0)] - (20.0f64 / 30.0).ln()).abs() < 1e-10);
        assert!((f.coef[(1, 0)] - (10.0f64 / 30.0).ln()).abs() < 1e-10);
    }

    #[test]
    fn zero_column_is_named() {
        let y: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let x = DMatrix::from_fn(30, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 0.0,
        });
        let e = fit_multinomial_design(&x, &y, 2, &["a".into(), "b".into(), "Medial".into()])
            .unwrap_err();
        assert!(e.to_string().contains("Medial"), "{e}");
    }

    #[test]
    fn separable_data_is_reported() {
        let y: Vec<usize> = (0..40).map(|i| (i >= 20) as usize).collect();
        let x = DMatrix::from_fn(40, 2, |i, j| if j == 0 { 1.0 } else { i as f64 - 19.5 });
        let e = fit_multinomial_design(&x, &y, 2, &["a".into(), "b".into()]).unwrap_err();
        assert!(e.to_string().contains("quasi-complete separation"), "{e}");
    }

    #[test]
    fn projection_of_rank_one_data() {
        let v = DMatrix::from_fn(10, 3, |i, j| i as f64 * [1.0, 2.0, -1.0][j]);
        let p = project_2d(&v).unwrap();
        assert!(p.column(1).amax() < 1e-10);
        assert!(project_2d(&DMatrix::zeros(2, 3)).is_err());
    }
}
