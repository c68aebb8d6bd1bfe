//! MFCC front end: pre-emphasis, Hamming window, power spectrum, HTK mel
//! filterbank, log with floor, orthonormal DCT-II.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub sample_rate: u32,
    /// Analysis window length in seconds.
    pub window: f64,
    /// Frame shift in seconds.
    pub hop: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub preemphasis: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate: 16_000,
            window: 0.025,
            hop: 0.010,
            n_fft: 512,
            n_mels: 40,
            n_coeffs: 13,
            preemphasis: 0.97,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn window_samples(&self) -> usize {
        (self.window * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(format!("mfcc config: {m}")));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if !(self.hop > 0.0) || self.hop_samples() == 0 {
            return bad("hop must be positive");
        }
        if self.window < self.hop {
            return bad("window must be at least the hop");
        }
        if self.n_mels == 0 || self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return bad("need 0 < n_coeffs <= n_mels");
        }
        if self.n_fft < self.window_samples() {
            return bad("n_fft shorter than the window");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must lie in [0, 1)");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// Center time (seconds) of frame `k`.
    pub fn frame_time(&self, k: usize) -> f64 {
        (k * self.hop_samples()) as f64 / self.sample_rate as f64 + self.frame_offset()
    }

    /// Center of the first frame, relative to the start of the signal.
    pub fn frame_offset(&self) -> f64 {
        self.window_samples() as f64 / 2.0 / self.sample_rate as f64
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        let w = self.window_samples();
        if n_samples < w {
            0
        } else {
            (n_samples - w) / self.hop_samples() + 1
        }
    }
}

/// Frame-level features with frame-center timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    /// n_frames × n_features
    pub data: DMatrix<f64>,
    pub frame_times: Vec<f64>,
}

impl FrameMatrix {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn empty(n_cols: usize) -> Self {
        FrameMatrix {
            data: DMatrix::zeros(0, n_cols),
            frame_times: Vec::new(),
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular filters, equally spaced on the
/// mel scale between 0 and Nyquist.
pub fn mel_centers(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// n_mels × (n_fft/2 + 1) triangular filter weights.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> DMatrix<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    DMatrix::from_fn(n_mels, n_bins, |m, k| {
        let f = k as f64 * sample_rate as f64 / n_fft as f64;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        if f > l && f <= c {
            (f - l) / (c - l)
        } else if f > c && f < r {
            (r - f) / (r - c)
        } else {
            0.0
        }
    })
}

/// Orthonormal DCT-II basis, n_out × n_in.
pub fn dct_matrix(n_out: usize, n_in: usize) -> DMatrix<f64> {
    let n = n_in as f64;
    DMatrix::from_fn(n_out, n_in, |k, m| {
        let scale = if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        scale * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / n).cos()
    })
}

/// Reusable MFCC extractor. The FFT plan is immutable and can be shared
/// across threads.
pub struct MfccExtractor {
    cfg: MfccConfig,
    window: Vec<f64>,
    filterbank: DMatrix<f64>,
    dct: DMatrix<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.window_samples();
        let window = (0..w)
            .map(|i| {
                if w == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (w - 1) as f64).cos()
                }
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(MfccExtractor {
            filterbank: mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate),
            dct: dct_matrix(cfg.n_coeffs, cfg.n_mels),
            window,
            fft,
            cfg,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    /// Log mel filterbank energies, n_frames × n_mels.
    pub fn log_mel(&self, signal: &[f64], sample_rate: u32) -> Result<FrameMatrix> {
        if sample_rate != self.cfg.sample_rate {
            return Err(Error::validation(format!(
                "signal sample rate {sample_rate} does not match configured {}",
                self.cfg.sample_rate
            )));
        }
        if signal.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("signal contains NaN or infinite samples"));
        }
        let n_frames = self.cfg.n_frames(signal.len());
        if n_frames == 0 {
            return Ok(FrameMatrix::empty(self.cfg.n_mels));
        }
        let a = self.cfg.preemphasis;
        let emph: Vec<f64> = (0..signal.len())
            .map(|i| {
                if i == 0 {
                    signal[0]
                } else {
                    signal[i] - a * signal[i - 1]
                }
            })
            .collect();

        let hop = self.cfg.hop_samples();
        let n_bins = self.cfg.n_fft / 2 + 1;
        let mut out = DMatrix::zeros(n_frames, self.cfg.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        let mut power = vec![0.0; n_bins];
        for f in 0..n_frames {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let start = f * hop;
            for (i, w) in self.window.iter().enumerate() {
                buf[i].re = emph[start + i] * w;
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..self.cfg.n_mels {
                let e: f64 = (0..n_bins)
                    .map(|k| self.filterbank[(m, k)] * power[k])
                    .sum();
                out[(f, m)] = e.max(self.cfg.log_floor).ln();
            }
        }
        Ok(FrameMatrix {
            data: out,
            frame_times: (0..n_frames).map(|k| self.cfg.frame_time(k)).collect(),
        })
    }

    pub fn compute(&self, signal: &[f64], sample_rate: u32) -> Result<FrameMatrix> {
        let lm = self.log_mel(signal, sample_rate)?;
        if lm.n_frames() == 0 {
            return Ok(FrameMatrix::empty(self.cfg.n_coeffs));
        }
        Ok(FrameMatrix {
            data: &lm.data * self.dct.transpose(),
            frame_times: lm.frame_times,
        })
    }
}

pub fn compute_mfcc(signal: &[f64], sample_rate: u32, cfg: &MfccConfig) -> Result<FrameMatrix> {
    MfccExtractor::new(cfg.clone())?.compute(signal, sample_rate)
}

/// Read a mono 16-bit PCM WAV file, returning samples scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(path, "expected 16-bit integer PCM"));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok((samples, spec.sample_rate))
}

/// Write mono 16-bit PCM; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize, sr: u32, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect()
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix(40, 40);
        let err = (&d * d.transpose() - DMatrix::<f64>::identity(40, 40)).amax();
        assert!(err < 1e-10, "{err}");
        // truncated rows stay orthonormal
        let d = dct_matrix(13, 40);
        assert!((&d * d.transpose() - DMatrix::<f64>::identity(13, 13)).amax() < 1e-10);
    }

    #[test]
    fn frame_count_formula() {
        let cfg = MfccConfig::default();
        let m = compute_mfcc(&vec![0.1; 400], 16_000, &cfg).unwrap();
        assert_eq!(m.n_frames(), 1);
        assert_eq!(
            compute_mfcc(&vec![0.1; 399], 16_000, &cfg)
                .unwrap()
                .n_frames(),
            0
        );
        assert_eq!(
            compute_mfcc(&vec![0.1; 560], 16_000, &cfg)
                .unwrap()
                .n_frames(),
            2
        );
        assert_eq!(
            compute_mfcc(&vec![0.1; 16_000], 16_000, &cfg)
                .unwrap()
                .n_frames(),
            98
        );
        assert!((m.frame_times[0] - 0.0125).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_hits_floor() {
        let cfg = MfccConfig::default();
        let ex = MfccExtractor::new(cfg.clone()).unwrap();
        let lm = ex.log_mel(&vec![0.0; 1600], 16_000).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(lm.data.iter().all(|&v| v == floor));
        let m = ex.compute(&vec![0.0; 1600], 16_000).unwrap();
        for r in 1..m.n_frames() {
            assert_eq!(m.data.row(r), m.data.row(0));
        }
    }

    #[test]
    fn tone_peaks_at_nearest_filter() {
        let cfg = MfccConfig {
            preemphasis: 0.0,
            ..MfccConfig::default()
        };
        let ex = MfccExtractor::new(cfg.clone()).unwrap();
        let lm = ex
            .log_mel(&tone(1000.0, 4000, 16_000, 0.5), 16_000)
            .unwrap();
        let centers = mel_centers(cfg.n_mels, cfg.sample_rate);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        for f in 0..lm.n_frames() {
            let row = lm.data.row(f);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn scaling_shifts_log_energy() {
        let cfg = MfccConfig::default();
        let ex = MfccExtractor::new(cfg.clone()).unwrap();
        let x: Vec<f64> = tone(440.0, 3200, 16_000, 0.3)
            .iter()
            .zip(tone(2300.0, 3200, 16_000, 0.2))
            .map(|(a, b)| a + b)
            .collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = ex.log_mel(&x, 16_000).unwrap();
        let b = ex.log_mel(&x2, 16_000).unwrap();
        for (u, v) in a.data.iter().zip(b.data.iter()) {
            if *u > cfg.log_floor.ln() + 1.0 {
                assert!((v - u - 4f64.ln()).abs() < 1e-8);
            }
        }
        let ma = ex.compute(&x, 16_000).unwrap();
        let mb = ex.compute(&x2, 16_000).unwrap();
        let c0_shift = 4f64.ln() * (cfg.n_mels as f64).sqrt();
        for f in 0..ma.n_frames() {
            assert!((mb.data[(f, 0)] - ma.data[(f, 0)] - c0_shift).abs() < 1e-8);
            for c in 1..cfg.n_coeffs {
                assert!((mb.data[(f, c)] - ma.data[(f, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn deterministic() {
        let x = tone(700.0, 5000, 16_000, 0.4);
        let cfg = MfccConfig::default();
        let a = compute_mfcc(&x, 16_000, &cfg).unwrap();
        let b = compute_mfcc(&x, 16_000, &cfg).unwrap();
        assert!(a
            .data
            .iter()
            .zip(b.data.iter())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn rejects_nan_and_rate_mismatch() {
        let cfg = MfccConfig::default();
        let mut x = vec![0.0; 800];
        x[3] = f64::NAN;
        assert!(compute_mfcc(&x, 16_000, &cfg).is_err());
        assert!(compute_mfcc(&vec![0.0; 800], 8_000, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = MfccConfig::default();
        assert!(ok.validate().is_ok());
        assert!(MfccConfig {
            n_coeffs: 41,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(MfccConfig {
            n_fft: 256,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(MfccConfig {
            window: 0.005,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(MfccConfig { hop: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x = tone(300.0, 1600, 16_000, 0.5);
        write_wav(&p, &x, 16_000).unwrap();
        let (y, sr) = read_wav(&p).unwrap();
        assert_eq!(sr, 16_000);
        assert_eq!(y.len(), x.len());
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-4));
    }
}
