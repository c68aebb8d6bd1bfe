//! Frame-level phonological feature classifier.
//!
//! A feedforward network over a stacked context window of MFCC frames, with
//! one sigmoid head per feature sharing a tanh hidden layer. Trained on the
//! summed per-feature binary cross-entropy with early stopping on a held-out
//! fraction of frames.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FEATURES, N_FEATURES};
use crate::error::{Error, Result};
use crate::mfcc::FrameMatrix;

pub const FEATURE_MODEL_MAGIC: &[u8; 8] = b"PHONFT1\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    /// Plain gradient descent. With full batches and a step below 1/L the
    /// training loss is non-increasing.
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModelConfig {
    pub hidden: usize,
    /// Frames stacked on each side of the center frame.
    pub context: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for FeatureModelConfig {
    fn default() -> Self {
        FeatureModelConfig {
            hidden: 128,
            context: 5,
            learning_rate: 1e-3,
            max_epochs: 30,
            patience: 5,
            batch_size: 64,
            validation_fraction: 0.2,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

/// Utterance-level frames with their binary feature targets.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub items: Vec<(FrameMatrix, DMatrix<f64>)>,
}

impl TrainingSet {
    pub fn push(&mut self, frames: FrameMatrix, labels: DMatrix<f64>) -> Result<()> {
        if frames.n_frames() != labels.nrows() {
            return Err(Error::validation(format!(
                "{} frames but {} label rows",
                frames.n_frames(),
                labels.nrows()
            )));
        }
        if labels.ncols() != N_FEATURES {
            return Err(Error::validation(format!(
                "labels need {N_FEATURES} columns"
            )));
        }
        self.items.push((frames, labels));
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.items.iter().map(|(f, _)| f.n_frames()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean per-frame loss on the training split after each epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    /// Features whose training labels were single-class, with the constant.
    pub constant_features: Vec<(String, f64)>,
    /// Frame indices (into the concatenated set) held out for validation.
    pub validation_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub feature_names: Vec<String>,
    input_dim: usize,
    context: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    w1: DMatrix<f64>,
    b1: DMatrix<f64>,
    w2: DMatrix<f64>,
    b2: DMatrix<f64>,
    constant: Vec<Option<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn stack_context(
    frames: &DMatrix<f64>,
    context: usize,
    mean: &[f64],
    scale: &[f64],
) -> DMatrix<f64> {
    let (n, d) = frames.shape();
    let width = 2 * context + 1;
    let mut out = DMatrix::zeros(n, d * width);
    for r in 0..n {
        for k in 0..width {
            let src =
                (r as isize + k as isize - context as isize).clamp(0, n as isize - 1) as usize;
            for c in 0..d {
                out[(r, k * d + c)] = (frames[(src, c)] - mean[c]) / scale[c];
            }
        }
    }
    out
}

struct Moments {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl Moments {
    fn like(p: &DMatrix<f64>) -> Self {
        Moments {
            m: DMatrix::zeros(p.nrows(), p.ncols()),
            v: DMatrix::zeros(p.nrows(), p.ncols()),
        }
    }
}

fn update(
    p: &mut DMatrix<f64>,
    g: &DMatrix<f64>,
    st: &mut Moments,
    t: i32,
    cfg: &FeatureModelConfig,
) {
    match cfg.optimizer {
        Optimizer::GradientDescent => *p -= g * cfg.learning_rate,
        Optimizer::Adam => {
            let (b1, b2, eps) = (0.9, 0.999, 1e-8);
            let c1 = 1.0 - f64::powi(b1, t);
            let c2 = 1.0 - f64::powi(b2, t);
            for i in 0..p.len() {
                st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
                st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (st.m[i] / c1) / ((st.v[i] / c2).sqrt() + eps);
            }
        }
    }
}

impl FeatureModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn constant_heads(&self) -> &[Option<f64>] {
        &self.constant
    }

    fn logits(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut h = x * self.w1.transpose();
        for mut row in h.row_iter_mut() {
            row += &self.b1;
            row.apply(|v| *v = v.tanh());
        }
        let mut z = &h * self.w2.transpose();
        for mut row in z.row_iter_mut() {
            row += &self.b2;
        }
        (h, z)
    }

    /// Per-frame feature probabilities, n_frames × 26.
    pub fn predict(&self, frames: &FrameMatrix) -> Result<DMatrix<f64>> {
        if frames.data.ncols() != self.input_dim {
            return Err(Error::validation(format!(
                "model expects {}-dim frames, got {}",
                self.input_dim,
                frames.data.ncols()
            )));
        }
        if frames.n_frames() == 0 {
            return Ok(DMatrix::zeros(0, self.feature_names.len()));
        }
        let x = stack_context(&frames.data, self.context, &self.mean, &self.scale);
        let (_, z) = self.logits(&x);
        let mut p = z.map(sigmoid);
        for (f, c) in self.constant.iter().enumerate() {
            if let Some(c) = c {
                p.column_mut(f).fill(*c);
            }
        }
        Ok(p)
    }

    pub fn train(
        set: &TrainingSet,
        cfg: &FeatureModelConfig,
    ) -> Result<(FeatureModel, TrainingReport)> {
        let n = set.n_frames();
        if n == 0 {
            return Err(Error::validation("no training frames"));
        }
        let d = set.items[0].0.data.ncols();
        if set.items.iter().any(|(f, _)| f.data.ncols() != d) {
            return Err(Error::validation("frames differ in dimensionality"));
        }
        if cfg.hidden == 0 || cfg.max_epochs == 0 || !(cfg.learning_rate > 0.0) {
            return Err(Error::validation(
                "hidden, max_epochs and learning_rate must be positive",
            ));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_val = if n >= 5 {
            ((n as f64) * cfg.validation_fraction).round() as usize
        } else {
            0
        };
        let mut val_idx = order[..n_val].to_vec();
        let mut train_idx = order[n_val..].to_vec();
        val_idx.sort_unstable();
        train_idx.sort_unstable();

        // normalization statistics from training frames
        let all_frames: Vec<&DMatrix<f64>> = set.items.iter().map(|(f, _)| &f.data).collect();
        let mut row_of = Vec::with_capacity(n);
        for (u, m) in all_frames.iter().enumerate() {
            for r in 0..m.nrows() {
                row_of.push((u, r));
            }
        }
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for &i in &train_idx {
            let (u, r) = row_of[i];
            for c in 0..d {
                mean[c] += all_frames[u][(r, c)];
            }
        }
        mean.iter_mut().for_each(|m| *m /= train_idx.len() as f64);
        for &i in &train_idx {
            let (u, r) = row_of[i];
            for c in 0..d {
                scale[c] += (all_frames[u][(r, c)] - mean[c]).powi(2);
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / train_idx.len() as f64).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }

        let stacked_dim = d * (2 * cfg.context + 1);
        let mut x = DMatrix::zeros(n, stacked_dim);
        let mut y = DMatrix::zeros(n, N_FEATURES);
        let mut off = 0;
        for (f, l) in &set.items {
            let s = stack_context(&f.data, cfg.context, &mean, &scale);
            x.rows_mut(off, s.nrows()).copy_from(&s);
            y.rows_mut(off, l.nrows()).copy_from(l);
            off += s.nrows();
        }

        // single-class features degenerate to constant predictors
        let mut constant = vec![None; N_FEATURES];
        let mut constant_features = Vec::new();
        for f in 0..N_FEATURES {
            let first = y[(train_idx[0], f)];
            if train_idx.iter().all(|&i| y[(i, f)] == first) {
                warn!(
                    "feature {:?} has single-class training labels ({first}); using a constant predictor",
                    FEATURES[f]
                );
                constant[f] = Some(first);
                constant_features.push((FEATURES[f].to_string(), first));
            }
        }
        let mask: Vec<f64> = constant
            .iter()
            .map(|c| if c.is_some() { 0.0 } else { 1.0 })
            .collect();

        let init = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
        };
        let mut model = FeatureModel {
            feature_names: FEATURES.iter().map(|s| s.to_string()).collect(),
            input_dim: d,
            context: cfg.context,
            mean,
            scale,
            w1: init(cfg.hidden, stacked_dim, &mut rng),
            b1: DMatrix::zeros(1, cfg.hidden),
            w2: init(N_FEATURES, cfg.hidden, &mut rng),
            b2: DMatrix::zeros(1, N_FEATURES),
            constant: constant.clone(),
        };

        let loss_on = |model: &FeatureModel, idx: &[usize]| -> f64 {
            if idx.is_empty() {
                return f64::NAN;
            }
            let mut total = 0.0;
            for chunk in idx.chunks(4096) {
                let xb = x.select_rows(chunk);
                let (_, z) = model.logits(&xb);
                for (bi, &i) in chunk.iter().enumerate() {
                    for f in 0..N_FEATURES {
                        total += mask[f] * bce_logits(z[(bi, f)], y[(i, f)]);
                    }
                }
            }
            total / idx.len() as f64
        };

        let mut moments = [
            Moments::like(&model.w1),
            Moments::like(&model.b1),
            Moments::like(&model.w2),
            Moments::like(&model.b2),
        ];
        let batch = if cfg.batch_size == 0 {
            train_idx.len()
        } else {
            cfg.batch_size
        };
        let mut step = 0i32;
        let mut train_loss = Vec::new();
        let mut val_loss = Vec::new();
        let mut best = (f64::INFINITY, 0usize, model.clone());
        let mut since_best = 0;
        let mut epoch_order = train_idx.clone();

        for epoch in 0..cfg.max_epochs {
            if cfg.batch_size != 0 {
                epoch_order.shuffle(&mut rng);
            }
            for chunk in epoch_order.chunks(batch) {
                let xb = x.select_rows(chunk);
                let (h, z) = model.logits(&xb);
                let b = chunk.len() as f64;
                let mut dz = DMatrix::zeros(chunk.len(), N_FEATURES);
                for (bi, &i) in chunk.iter().enumerate() {
                    for f in 0..N_FEATURES {
                        dz[(bi, f)] = mask[f] * (sigmoid(z[(bi, f)]) - y[(i, f)]) / b;
                    }
                }
                let gw2 = dz.transpose() * &h;
                let gb2 = DMatrix::from_fn(1, N_FEATURES, |_, f| dz.column(f).sum());
                let mut dh = &dz * &model.w2;
                dh.zip_apply(&h, |g, hv| *g *= 1.0 - hv * hv);
                let gw1 = dh.transpose() * &xb;
                let gb1 = DMatrix::from_fn(1, dh.ncols(), |_, j| dh.column(j).sum());

                step += 1;
                let [m1, mb1, m2, mb2] = &mut moments;
                update(&mut model.w1, &gw1, m1, step, cfg);
                update(&mut model.b1, &gb1, mb1, step, cfg);
                update(&mut model.w2, &gw2, m2, step, cfg);
                update(&mut model.b2, &gb2, mb2, step, cfg);
            }
            let tl = loss_on(&model, &train_idx);
            let vl = if val_idx.is_empty() {
                tl
            } else {
                loss_on(&model, &val_idx)
            };
            if !tl.is_finite() {
                return Err(Error::numerical(format!(
                    "training loss diverged at epoch {epoch}"
                )));
            }
            train_loss.push(tl);
            val_loss.push(vl);
            if vl < best.0 {
                best = (vl, epoch, model.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }

        let mut model = best.2;
        model.round_to_f32();
        Ok((
            model,
            TrainingReport {
                train_loss,
                val_loss,
                best_epoch: best.1,
                constant_features,
                validation_frames: val_idx,
            },
        ))
    }

    /// Quantize parameters to the precision they are stored with on disk.
    fn round_to_f32(&mut self) {
        let q = |m: &mut DMatrix<f64>| m.apply(|v| *v = *v as f32 as f64);
        q(&mut self.w1);
        q(&mut self.b1);
        q(&mut self.w2);
        q(&mut self.b2);
        self.mean.iter_mut().for_each(|v| *v = *v as f32 as f64);
        self.scale.iter_mut().for_each(|v| *v = *v as f32 as f64);
        self.constant
            .iter_mut()
            .for_each(|c| *c = c.map(|v| v as f32 as f64));
    }

    /// Serialize: magic, version, shapes, then little-endian f32 weights in
    /// row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        let f32le = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
        out.extend_from_slice(FEATURE_MODEL_MAGIC);
        u32le(&mut out, FORMAT_VERSION as usize);
        u32le(&mut out, self.input_dim);
        u32le(&mut out, self.context);
        u32le(&mut out, self.hidden());
        u32le(&mut out, self.feature_names.len());
        let names = self.feature_names.join("\n");
        u32le(&mut out, names.len());
        out.extend_from_slice(names.as_bytes());
        for c in &self.constant {
            out.push(c.is_some() as u8);
        }
        for c in &self.constant {
            f32le(&mut out, c.unwrap_or(0.0));
        }
        for v in self.mean.iter().chain(&self.scale) {
            f32le(&mut out, *v);
        }
        for m in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    f32le(&mut out, m[(r, c)]);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m.to_string());
        if bytes.get(..8) != Some(&FEATURE_MODEL_MAGIC[..]) {
            return Err(bad("bad magic; not a feature model file"));
        }
        let mut pos = 8usize;
        let rd_u32 = |pos: &mut usize| -> Result<usize> {
            let b = bytes
                .get(*pos..*pos + 4)
                .ok_or_else(|| bad("truncated file"))?;
            *pos += 4;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        };
        let rd_f32 = |pos: &mut usize| -> Result<f64> {
            let b = bytes
                .get(*pos..*pos + 4)
                .ok_or_else(|| bad("truncated file"))?;
            *pos += 4;
            Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        };
        let version = rd_u32(&mut pos)?;
        if version != FORMAT_VERSION as usize {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let input_dim = rd_u32(&mut pos)?;
        let context = rd_u32(&mut pos)?;
        let hidden = rd_u32(&mut pos)?;
        let nf = rd_u32(&mut pos)?;
        let names_len = rd_u32(&mut pos)?;
        let names = bytes
            .get(pos..pos + names_len)
            .ok_or_else(|| bad("truncated file"))?;
        pos += names_len;
        let feature_names: Vec<String> = std::str::from_utf8(names)
            .map_err(|_| bad("feature names are not UTF-8"))?
            .split('\n')
            .map(str::to_string)
            .collect();
        if feature_names.len() != nf {
            return Err(bad("feature name count does not match header"));
        }
        let flags = bytes
            .get(pos..pos + nf)
            .ok_or_else(|| bad("truncated file"))?
            .to_vec();
        pos += nf;
        let mut constant = Vec::with_capacity(nf);
        for flag in flags {
            let v = rd_f32(&mut pos)?;
            constant.push((flag != 0).then_some(v));
        }
        let stacked = input_dim * (2 * context + 1);
        let vec_of = |n: usize, pos: &mut usize| -> Result<Vec<f64>> {
            (0..n).map(|_| rd_f32(pos)).collect()
        };
        let mean = vec_of(input_dim, &mut pos)?;
        let scale = vec_of(input_dim, &mut pos)?;
        let w1 = DMatrix::from_row_slice(hidden, stacked, &vec_of(hidden * stacked, &mut pos)?);
        let b1 = DMatrix::from_row_slice(1, hidden, &vec_of(hidden, &mut pos)?);
        let w2 = DMatrix::from_row_slice(nf, hidden, &vec_of(nf * hidden, &mut pos)?);
        let b2 = DMatrix::from_row_slice(1, nf, &vec_of(nf, &mut pos)?);
        if pos != bytes.len() {
            return Err(bad("trailing bytes after weights"));
        }
        Ok(FeatureModel {
            feature_names,
            input_dim,
            context,
            mean,
            scale,
            w1,
            b1,
            w2,
            b2,
            constant,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phonfeat::{evaluate_features, feature_index};

    use crate::synth::separable_frames as synthetic;

    fn small_cfg() -> FeatureModelConfig {
        FeatureModelConfig {
            hidden: 32,
            context: 1,
            learning_rate: 1e-2,
            max_epochs: 15,
            ..FeatureModelConfig::default()
        }
    }

    #[test]
    fn separable_features_learned() {
        let cfg = FeatureModelConfig {
            hidden: 64,
            context: 0,
            max_epochs: 30,
            ..small_cfg()
        };
        let (model, rep) = FeatureModel::train(&synthetic(12, 100, 1), &cfg).unwrap();
        assert!(rep.constant_features.is_empty());
        let scores = evaluate_features(&model, &synthetic(2, 60, 2)).unwrap();
        for s in &scores {
            assert!(s.f1 > 99.0, "{} f1 {}", s.name, s.f1);
        }
    }

    #[test]
    fn single_class_feature_is_constant() {
        let mut set = synthetic(3, 40, 3);
        let f = feature_index("voice").unwrap();
        for (_, l) in set.items.iter_mut() {
            l.column_mut(f).fill(1.0);
        }
        let (model, rep) = FeatureModel::train(&set, &small_cfg()).unwrap();
        assert_eq!(rep.constant_features, vec![("voice".to_string(), 1.0)]);
        let p = model.predict(&set.items[0].0).unwrap();
        assert!(p.column(f).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn full_batch_descent_is_monotone() {
        let cfg = FeatureModelConfig {
            optimizer: Optimizer::GradientDescent,
            batch_size: 0,
            learning_rate: 0.05,
            max_epochs: 25,
            patience: 100,
            ..small_cfg()
        };
        let (_, rep) = FeatureModel::train(&synthetic(3, 40, 4), &cfg).unwrap();
        assert_eq!(rep.train_loss.len(), 25);
        for w in rep.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", rep.train_loss);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let set = synthetic(2, 30, 5);
        let a = FeatureModel::train(&set, &small_cfg()).unwrap();
        let b = FeatureModel::train(&set, &small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_load_round_trip() {
        let set = synthetic(2, 30, 6);
        let (model, _) = FeatureModel::train(&set, &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        model.save(&p).unwrap();
        let back = FeatureModel::load(&p).unwrap();
        assert_eq!(back, model);
        assert_eq!(
            back.predict(&set.items[0].0).unwrap(),
            model.predict(&set.items[0].0).unwrap()
        );

        let bytes = model.to_bytes();
        assert!(FeatureModel::from_bytes(&bytes[..bytes.len() - 3], &p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FeatureModel::from_bytes(&bad, &p).is_err());
    }

    #[test]
    fn wrong_input_dim_rejected() {
        let (model, _) = FeatureModel::train(&synthetic(2, 20, 7), &small_cfg()).unwrap();
        assert!(model.predict(&FrameMatrix::empty(13)).is_err());
    }
}
