//! Seeded synthetic data with known ground truth, for tests and the fixture
//! corpus.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{AccentLabel, PhoneToken, Position};
use crate::distregress::{
    design_matrix, probabilities, zscore, BaselineBank, DistanceRecord, RegressionSpec, Variety,
};
use crate::mfcc::FrameMatrix;
use crate::phonfeat::{TrainingSet, FEATURES, N_FEATURES};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| normal(rng))
}

/// Class-mean offset of informative features in noise standard deviations.
pub const PLANTED_SNR: f64 = 3.0;

/// Three-class data where only the first `informative` columns carry
/// signal. Informative column f has mean `snr` for items of class
/// `f % 3` and `-snr / 2` otherwise, plus unit Gaussian noise; every other
/// column is pure unit noise. Labels cycle so classes are balanced.
pub fn planted_support(
    seed: u64,
    n: usize,
    d: usize,
    informative: usize,
    snr: f64,
) -> (DMatrix<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = DMatrix::from_fn(n, d, |i, j| {
        let mean = if j < informative {
            if y[i] == j % 3 {
                snr
            } else {
                -snr / 2.0
            }
        } else {
            0.0
        };
        mean + normal(&mut r)
    });
    (x, y)
}

/// Placeholder tokens carrying only an accent label, for in-memory sources.
pub fn label_tokens(labels: &[usize]) -> Vec<PhoneToken> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| PhoneToken {
            utterance_id: format!("syn{i:05}"),
            phone: "ʋ".into(),
            word_id: "0:w".into(),
            position: Position::Initial,
            t_start: 0.0,
            t_end: 0.1,
            accent: AccentLabel::from_index(l).expect("label in 0..3"),
        })
        .collect()
}

/// Per-layer segment matrices where only `signal_layer` separates the
/// accent classes (class means ±`snr` on its first three columns).
pub fn planted_layers(
    seed: u64,
    n: usize,
    n_layers: usize,
    dim: usize,
    signal_layer: usize,
    snr: f64,
) -> (Vec<PhoneToken>, Vec<DMatrix<f64>>) {
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
    let layers = (0..n_layers)
        .map(|l| {
            let mut m = gaussian_matrix(&mut r, n, dim);
            if l == signal_layer {
                for i in 0..n {
                    for j in 0..3.min(dim) {
                        m[(i, j)] += if labels[i] == j { snr } else { -snr / 2.0 };
                    }
                }
            }
            m
        })
        .collect();
    (label_tokens(&labels), layers)
}

/// True coefficients used by the regression recovery check: rows are
/// mild and strong against no/negligible, columns follow
/// `distregress::RegressionSpec::default().term_names()`.
pub fn recovery_beta() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        2,
        9,
        &[
            -0.3, 0.8, -1.0, 0.3, -0.2, 0.3, -0.2, 0.25, -0.3, //
            -0.8, 1.2, -1.4, 0.2, 0.4, -0.25, 0.35, -0.3, 0.2,
        ],
    )
}

fn token(i: usize, position: Position, accent: AccentLabel) -> PhoneToken {
    PhoneToken {
        utterance_id: format!("syn{i:05}"),
        phone: "ɾ".into(),
        word_id: format!("{i}:w"),
        position,
        t_start: 0.0,
        t_end: 0.1,
        accent,
    }
}

/// Records whose outcomes are drawn from a multinomial logit with
/// coefficients `beta` (2 × 9, full interaction design on z-scored
/// distances). Raw distances are positive, positions uniform.
pub fn multinomial_records(seed: u64, n: usize, beta: &DMatrix<f64>) -> Vec<DistanceRecord> {
    let mut r = rng(seed);
    let raw: Vec<(f64, f64, Position)> = (0..n)
        .map(|_| {
            let a = (5.0 + normal(&mut r)).abs();
            let e = (5.0 + normal(&mut r)).abs();
            (a, e, Position::ALL[r.random_range(0..3)])
        })
        .collect();
    let za = zscore(&raw.iter().map(|v| v.0).collect::<Vec<_>>());
    let zi = zscore(&raw.iter().map(|v| v.1).collect::<Vec<_>>());
    let mut recs: Vec<DistanceRecord> = raw
        .iter()
        .enumerate()
        .map(|(i, &(a, e, pos))| DistanceRecord {
            token: token(i, pos, AccentLabel::NoNegligible),
            d_ae: a,
            d_ie: e,
            z_ae: za[i],
            z_ie: zi[i],
        })
        .collect();
    let x = design_matrix(&recs, &RegressionSpec::default());
    let p = probabilities(&x, beta);
    for (i, rec) in recs.iter_mut().enumerate() {
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut level = 2;
        for c in 0..3 {
            acc += p[(i, c)];
            if u < acc {
                level = c;
                break;
            }
        }
        rec.token.accent = AccentLabel::from_index(level).expect("level in 0..3");
    }
    recs
}

/// Tokens, their vectors, and AE/IE baseline banks. Each token sits at
/// `(1 - t)·μ_AE + t·μ_IE` plus isotropic noise of a per-token scale, with
/// `t` drawn nearer the IE end the stronger the accent.
pub fn sign_pattern_corpus(
    seed: u64,
    n: usize,
    dim: usize,
) -> (Vec<PhoneToken>, DMatrix<f64>, BaselineBank, BaselineBank) {
    let mut r = rng(seed);
    let sep = 4.0;
    let ie_mean = |j: usize| if j == 0 { sep } else { 0.0 };
    let bank_n = 300;
    let ae = DMatrix::from_fn(bank_n, dim, |_, _| normal(&mut r));
    let ie = DMatrix::from_fn(bank_n, dim, |_, j| ie_mean(j) + normal(&mut r));
    let mut tokens = Vec::with_capacity(n);
    let mut v = DMatrix::zeros(n, dim);
    for i in 0..n {
        let accent = AccentLabel::ALL[i % 3];
        let (lo, hi) = [(0.0, 0.45), (0.3, 0.75), (0.55, 1.0)][accent.index()];
        let t: f64 = r.random_range(lo..hi);
        let scale: f64 = r.random_range(0.5..1.5);
        for j in 0..dim {
            v[(i, j)] = t * ie_mean(j) + scale * normal(&mut r);
        }
        tokens.push(token(i, Position::ALL[r.random_range(0..3)], accent));
    }
    (
        tokens,
        v,
        BaselineBank::new(Variety::Ae, "ɹ", ae).expect("non-empty"),
        BaselineBank::new(Variety::Ie, "ɾ", ie).expect("non-empty"),
    )
}

/// Inputs for a relative-weight check where the selected columns are
/// driven only by the designated features.
pub struct WeightSetup {
    pub tokens: Vec<PhoneToken>,
    pub full: DMatrix<f64>,
    pub selected: Vec<usize>,
    pub profiles: DMatrix<f64>,
    pub features: Vec<(String, usize)>,
    pub designated: Vec<String>,
}

/// `n_features` latent features become probability profiles through a
/// logistic link. The first `selected_dim` representation columns mix the
/// first `n_designated` latents, the rest mix the others; both carry
/// small noise.
pub fn weight_setup(seed: u64, n: usize, n_features: usize, n_designated: usize) -> WeightSetup {
    let mut r = rng(seed);
    let selected_dim = 6;
    let other_dim = 24;
    let latent = gaussian_matrix(&mut r, n, n_features);
    let mix_sel = gaussian_matrix(&mut r, n_designated, selected_dim);
    let mix_other = gaussian_matrix(&mut r, n_features - n_designated, other_dim);
    let sel = latent.columns(0, n_designated) * mix_sel;
    let other = latent.columns(n_designated, n_features - n_designated) * mix_other;
    let full = DMatrix::from_fn(n, selected_dim + other_dim, |i, j| {
        let s = if j < selected_dim {
            sel[(i, j)]
        } else {
            other[(i, j - selected_dim)]
        };
        s + 0.1 * normal(&mut r)
    });
    let profiles = latent.map(|z| 1.0 / (1.0 + (-z).exp()));
    let features: Vec<(String, usize)> = (0..n_features)
        .map(|f| (FEATURES[f].to_string(), f))
        .collect();
    WeightSetup {
        tokens: (0..n)
            .map(|i| token(i, Position::Initial, AccentLabel::ALL[i % 3]))
            .collect(),
        full,
        selected: (0..selected_dim).collect(),
        profiles,
        designated: features[..n_designated]
            .iter()
            .map(|f| f.0.clone())
            .collect(),
        features,
    }
}

/// Frames of width 32 where column f < 26 sits at +4 when feature f is on
/// and -4 when off (each on with probability 0.4), plus uniform noise.
pub fn separable_frames(n_utts: usize, frames: usize, seed: u64) -> TrainingSet {
    let mut r = rng(seed);
    let mut set = TrainingSet::default();
    for _ in 0..n_utts {
        let mut labels = DMatrix::zeros(frames, N_FEATURES);
        let mut data = DMatrix::zeros(frames, 32);
        for i in 0..frames {
            for f in 0..N_FEATURES {
                let on = r.random_bool(0.4);
                labels[(i, f)] = on as u8 as f64;
                data[(i, f)] = if on { 4.0 } else { -4.0 } + r.random_range(-1.0..1.0);
            }
            for c in N_FEATURES..32 {
                data[(i, c)] = r.random_range(-1.0..1.0);
            }
        }
        let times = (0..frames).map(|k| (k as f64 + 0.5) * 0.01).collect();
        set.push(
            FrameMatrix {
                data,
                frame_times: times,
            },
            labels,
        )
        .expect("frames and labels agree");
    }
    set
}
