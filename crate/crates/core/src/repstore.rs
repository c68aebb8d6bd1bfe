//! SEGREP1 representation container.
//!
//! A store is a directory holding `manifest.txt` and one binary file per
//! utterance. Each binary file starts with a 24-byte header
//!
//! ```text
//! 0   7  magic "SEGREP1"
//! 7   1  format version (1)
//! 8   2  byte-order marker 0x0102, little-endian (bytes 02 01)
//! 10  2  reserved, zero
//! 12  4  n_layers (u32 LE)
//! 16  4  n_frames (u32 LE)
//! 20  4  dim      (u32 LE)
//! ```
//!
//! followed by `n_layers * n_frames * dim` little-endian f32 values: layer 0
//! rows first, each layer row-major. Frame k is centered at
//! `frame_offset + k * frame_hop`, with `frame_offset = frame_hop / 2` unless
//! the manifest says otherwise.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::corpus::PhoneToken;
use crate::error::{Error, Result};
use crate::phonfeat::covered_frames;

pub const SEGREP_MAGIC: &[u8; 7] = b"SEGREP1";
pub const SEGREP_VERSION: u8 = 1;
pub const BYTE_ORDER_MARKER: u16 = 0x0102;
pub const HEADER_LEN: usize = 24;
pub const MANIFEST_FILE: &str = "manifest.txt";
const LOCK_FILE: &str = ".segrep.lock";

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEntry {
    pub utterance_id: String,
    pub n_frames: usize,
    /// File name relative to the store directory.
    pub file: String,
    /// Byte offset of the payload within `file`.
    pub offset: u64,
    /// Payload size in bytes.
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepManifest {
    pub model_id: String,
    pub n_layers: usize,
    pub dim: usize,
    pub frame_hop: f64,
    /// Center of frame 0 in seconds. `None` means `frame_hop / 2`.
    pub frame_offset: Option<f64>,
    /// Free-form note on what layer 0 is (e.g. "0=first transformer block").
    pub layer_indexing: Option<String>,
    pub utterances: Vec<UtteranceEntry>,
}

impl RepManifest {
    pub fn new(model_id: impl Into<String>, n_layers: usize, dim: usize, frame_hop: f64) -> Self {
        RepManifest {
            model_id: model_id.into(),
            n_layers,
            dim,
            frame_hop,
            frame_offset: None,
            layer_indexing: None,
            utterances: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.dim == 0 {
            return Err(Error::validation("n_layers and dim must be at least 1"));
        }
        if !(self.frame_hop > 0.0 && self.frame_hop.is_finite()) {
            return Err(Error::validation("frame_hop must be positive"));
        }
        if let Some(o) = self.frame_offset {
            if !o.is_finite() {
                return Err(Error::validation("frame_offset must be finite"));
            }
        }
        if self.model_id.chars().any(char::is_whitespace) || self.model_id.is_empty() {
            return Err(Error::validation("model_id must be a non-empty token"));
        }
        Ok(())
    }

    pub fn frame_center(&self, k: usize) -> f64 {
        self.frame_offset.unwrap_or(self.frame_hop / 2.0) + k as f64 * self.frame_hop
    }

    pub fn frame_times(&self, n_frames: usize) -> Vec<f64> {
        (0..n_frames).map(|k| self.frame_center(k)).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str("SEGREP1 manifest\n");
        s.push_str(&format!("version {SEGREP_VERSION}\n"));
        s.push_str(&format!("model_id {}\n", self.model_id));
        s.push_str(&format!("n_layers {}\n", self.n_layers));
        s.push_str(&format!("dim {}\n", self.dim));
        s.push_str(&format!("frame_hop {}\n", self.frame_hop));
        if let Some(o) = self.frame_offset {
            s.push_str(&format!("frame_offset {o}\n"));
        }
        if let Some(l) = &self.layer_indexing {
            s.push_str(&format!("layer_indexing {l}\n"));
        }
        s.push_str(&format!("utterances {}\n", self.utterances.len()));
        for u in &self.utterances {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                u.utterance_id, u.n_frames, u.file, u.offset, u.size
            ));
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::format(origin, format!("line {line}: {m}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "SEGREP1 manifest")) => {}
            _ => return Err(bad(1, "missing \"SEGREP1 manifest\" header")),
        }
        let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
        let mut n_utts = None;
        for (no, line) in lines.by_ref() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| bad(no, "expected \"key value\""))?;
            if k == "utterances" {
                n_utts = Some(
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| bad(no, "bad utterance count"))?,
                );
                break;
            }
            fields.insert(k, (no, v.trim()));
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| bad(0, &format!("missing {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            let (no, v) = get(k)?;
            v.parse().map_err(|_| bad(no, &format!("bad {k}")))
        };
        let real = |k: &str| -> Result<f64> {
            let (no, v) = get(k)?;
            v.parse().map_err(|_| bad(no, &format!("bad {k}")))
        };
        let version = num("version")?;
        if version != SEGREP_VERSION as usize {
            return Err(Error::format(
                origin,
                format!("unsupported manifest version {version}"),
            ));
        }
        let n_utts = n_utts.ok_or_else(|| bad(0, "missing utterances"))?;
        let mut m = RepManifest {
            model_id: get("model_id")?.1.to_string(),
            n_layers: num("n_layers")?,
            dim: num("dim")?,
            frame_hop: real("frame_hop")?,
            frame_offset: fields
                .contains_key("frame_offset")
                .then(|| real("frame_offset"))
                .transpose()?,
            layer_indexing: fields.get("layer_indexing").map(|(_, v)| v.to_string()),
            utterances: Vec::with_capacity(n_utts),
        };
        for (no, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(bad(no, "utterance rows need 5 tab-separated columns"));
            }
            let int = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| bad(no, &format!("bad integer {s:?}")))
            };
            m.utterances.push(UtteranceEntry {
                utterance_id: cols[0].to_string(),
                n_frames: int(cols[1])? as usize,
                file: cols[2].to_string(),
                offset: int(cols[3])?,
                size: int(cols[4])?,
            });
        }
        if m.utterances.len() != n_utts {
            return Err(Error::format(
                origin,
                format!(
                    "manifest lists {} utterances but declares {n_utts}",
                    m.utterances.len()
                ),
            ));
        }
        m.validate()
            .map_err(|e| Error::format(origin, e.to_string()))?;
        Ok(m)
    }
}

/// One layer of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMatrix {
    pub layer: usize,
    /// n_frames × dim
    pub data: DMatrix<f32>,
}

fn encode_header(n_layers: usize, n_frames: usize, dim: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..7].copy_from_slice(SEGREP_MAGIC);
    h[7] = SEGREP_VERSION;
    h[8..10].copy_from_slice(&BYTE_ORDER_MARKER.to_le_bytes());
    h[12..16].copy_from_slice(&(n_layers as u32).to_le_bytes());
    h[16..20].copy_from_slice(&(n_frames as u32).to_le_bytes());
    h[20..24].copy_from_slice(&(dim as u32).to_le_bytes());
    h
}

/// Serialize one utterance: header plus payload.
pub fn encode_utterance(layers: &[DMatrix<f32>]) -> Result<Vec<u8>> {
    let first = layers
        .first()
        .ok_or_else(|| Error::validation("no layers to write"))?;
    let (n_frames, dim) = first.shape();
    if layers.iter().any(|l| l.shape() != (n_frames, dim)) {
        return Err(Error::validation("layers differ in shape"));
    }
    if layers.iter().any(|l| l.iter().any(|v| !v.is_finite())) {
        return Err(Error::validation("non-finite value in representation"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + layers.len() * n_frames * dim * 4);
    out.extend_from_slice(&encode_header(layers.len(), n_frames, dim));
    for l in layers {
        for r in 0..n_frames {
            for c in 0..dim {
                out.extend_from_slice(&l[(r, c)].to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn file_name(index: usize, utterance_id: &str) -> String {
    let clean: String = utterance_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:05}_{clean}.bin")
}

/// Exclusive writer for a store directory. Holds a lock file until
/// [`SegrepWriter::finish`] or drop.
pub struct SegrepWriter {
    dir: PathBuf,
    manifest: RepManifest,
    lock: Option<PathBuf>,
}

impl SegrepWriter {
    pub fn create(dir: &Path, mut manifest: RepManifest) -> Result<Self> {
        manifest.validate()?;
        manifest.utterances.clear();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lock = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::validation(format!("{} is locked by another writer", dir.display()))
                } else {
                    Error::io(&lock, e)
                }
            })?;
        Ok(SegrepWriter {
            dir: dir.to_path_buf(),
            manifest,
            lock: Some(lock),
        })
    }

    pub fn write_utterance(&mut self, utterance_id: &str, layers: &[DMatrix<f32>]) -> Result<()> {
        if utterance_id.is_empty() || utterance_id.contains(['\t', '\n']) {
            return Err(Error::validation(format!(
                "bad utterance id {utterance_id:?}"
            )));
        }
        if self
            .manifest
            .utterances
            .iter()
            .any(|u| u.utterance_id == utterance_id)
        {
            return Err(Error::validation(format!(
                "duplicate utterance {utterance_id:?}"
            )));
        }
        if layers.len() != self.manifest.n_layers {
            return Err(Error::validation(format!(
                "layer count mismatch: manifest has {}, got {}",
                self.manifest.n_layers,
                layers.len()
            )));
        }
        if layers[0].ncols() != self.manifest.dim {
            return Err(Error::validation(format!(
                "shape mismatch: manifest dim {}, got {}",
                self.manifest.dim,
                layers[0].ncols()
            )));
        }
        let bytes = encode_utterance(layers)?;
        let name = file_name(self.manifest.utterances.len(), utterance_id);
        let path = self.dir.join(&name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.utterances.push(UtteranceEntry {
            utterance_id: utterance_id.to_string(),
            n_frames: layers[0].nrows(),
            file: name,
            offset: HEADER_LEN as u64,
            size: (bytes.len() - HEADER_LEN) as u64,
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<RepManifest> {
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, self.manifest.render()).map_err(|e| Error::io(&path, e))?;
        self.release();
        Ok(self.manifest.clone())
    }

    fn release(&mut self) {
        if let Some(l) = self.lock.take() {
            let _ = fs::remove_file(l);
        }
    }
}

impl Drop for SegrepWriter {
    fn drop(&mut self) {
        self.release();
    }
}

/// Write a complete store in one call.
pub fn write_segrep(
    dir: &Path,
    manifest: RepManifest,
    utterances: &[(String, Vec<DMatrix<f32>>)],
) -> Result<RepManifest> {
    let mut w = SegrepWriter::create(dir, manifest)?;
    for (id, layers) in utterances {
        w.write_utterance(id, layers)?;
    }
    w.finish()
}

/// Read-only view of a store. Layer matrices are read on demand.
#[derive(Debug, Clone)]
pub struct RepStore {
    dir: PathBuf,
    manifest: RepManifest,
    index: HashMap<String, usize>,
}

impl RepStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = RepManifest::parse(&text, &path)?;
        let mut index = HashMap::new();
        for (i, u) in manifest.utterances.iter().enumerate() {
            if index.insert(u.utterance_id.clone(), i).is_some() {
                return Err(Error::format(
                    &path,
                    format!("duplicate utterance {:?}", u.utterance_id),
                ));
            }
        }
        Ok(RepStore {
            dir: dir.to_path_buf(),
            manifest,
            index,
        })
    }

    pub fn manifest(&self) -> &RepManifest {
        &self.manifest
    }

    pub fn n_layers(&self) -> usize {
        self.manifest.n_layers
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn contains(&self, utterance_id: &str) -> bool {
        self.index.contains_key(utterance_id)
    }

    fn entry(&self, utterance_id: &str) -> Result<&UtteranceEntry> {
        self.index
            .get(utterance_id)
            .map(|&i| &self.manifest.utterances[i])
            .ok_or_else(|| Error::validation(format!("utterance {utterance_id:?} not in store")))
    }

    /// Open an utterance file and check its header against the manifest.
    fn open_checked(&self, e: &UtteranceEntry) -> Result<(File, PathBuf)> {
        let path = self.dir.join(&e.file);
        let mut f = File::open(&path).map_err(|err| Error::io(&path, err))?;
        let len = f.metadata().map_err(|err| Error::io(&path, err))?.len();
        let mut h = [0u8; HEADER_LEN];
        if len < HEADER_LEN as u64 {
            return Err(Error::format(&path, "truncated file"));
        }
        f.read_exact(&mut h).map_err(|err| Error::io(&path, err))?;
        let m = &self.manifest;
        check_header(&h, m.n_layers, e.n_frames, m.dim).map_err(|msg| Error::format(&path, msg))?;
        let payload = (m.n_layers * e.n_frames * m.dim * 4) as u64;
        if e.offset != HEADER_LEN as u64 || e.size != payload {
            return Err(Error::format(
                &path,
                "shape mismatch: manifest offset/size disagree with header",
            ));
        }
        if len < HEADER_LEN as u64 + payload {
            return Err(Error::format(&path, "truncated file"));
        }
        if len > HEADER_LEN as u64 + payload {
            return Err(Error::format(
                &path,
                "shape mismatch: trailing bytes after payload",
            ));
        }
        Ok((f, path))
    }

    pub fn n_frames(&self, utterance_id: &str) -> Result<usize> {
        Ok(self.entry(utterance_id)?.n_frames)
    }

    pub fn frame_times(&self, utterance_id: &str) -> Result<Vec<f64>> {
        Ok(self.manifest.frame_times(self.n_frames(utterance_id)?))
    }

    pub fn layer(&self, utterance_id: &str, layer: usize) -> Result<LayerMatrix> {
        if layer >= self.manifest.n_layers {
            return Err(Error::validation(format!(
                "layer {layer} out of range (store has {})",
                self.manifest.n_layers
            )));
        }
        let e = self.entry(utterance_id)?;
        let (mut f, path) = self.open_checked(e)?;
        let (n, d) = (e.n_frames, self.manifest.dim);
        let start = HEADER_LEN as u64 + (layer * n * d * 4) as u64;
        f.seek(SeekFrom::Start(start))
            .map_err(|err| Error::io(&path, err))?;
        let mut buf = vec![0u8; n * d * 4];
        f.read_exact(&mut buf)
            .map_err(|err| Error::io(&path, err))?;
        let data = decode_rows(&buf, n, d).map_err(|msg| Error::format(&path, msg))?;
        Ok(LayerMatrix { layer, data })
    }

    pub fn layers(&self, utterance_id: &str) -> Result<Vec<LayerMatrix>> {
        (0..self.manifest.n_layers)
            .map(|l| self.layer(utterance_id, l))
            .collect()
    }

    /// Read every payload and check shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        for u in &self.manifest.utterances {
            self.layers(&u.utterance_id)?;
        }
        Ok(())
    }
}

fn check_header(
    h: &[u8],
    n_layers: usize,
    n_frames: usize,
    dim: usize,
) -> std::result::Result<(), String> {
    if &h[..7] != SEGREP_MAGIC {
        return Err("bad magic; not a SEGREP1 file".into());
    }
    if h[7] != SEGREP_VERSION {
        return Err(format!("unsupported version {}", h[7]));
    }
    let marker = u16::from_le_bytes([h[8], h[9]]);
    if marker != BYTE_ORDER_MARKER {
        return Err(format!("endianness marker mismatch: read {marker:#06x}"));
    }
    let u = |i: usize| u32::from_le_bytes([h[i], h[i + 1], h[i + 2], h[i + 3]]) as usize;
    if u(12) != n_layers {
        return Err(format!(
            "layer count mismatch: manifest has {n_layers}, payload has {}",
            u(12)
        ));
    }
    if u(16) != n_frames || u(20) != dim {
        return Err(format!(
            "shape mismatch: manifest {n_frames}×{dim}, header {}×{}",
            u(16),
            u(20)
        ));
    }
    Ok(())
}

fn decode_rows(buf: &[u8], n: usize, d: usize) -> std::result::Result<DMatrix<f32>, String> {
    let mut m = DMatrix::zeros(n, d);
    for (i, ch) in buf.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]);
        if !v.is_finite() {
            return Err(format!("non-finite value at frame {} dim {}", i / d, i % d));
        }
        m[(i / d, i % d)] = v;
    }
    Ok(m)
}

/// Mean of the rows whose frame centers fall in `[t_start, t_end)`.
pub fn segment_mean(
    data: &DMatrix<f32>,
    frame_times: &[f64],
    t_start: f64,
    t_end: f64,
) -> Result<DVector<f64>> {
    let r = covered_frames(frame_times, t_start, t_end);
    if r.is_empty() {
        return Err(Error::validation(format!(
            "segment shorter than frame hop: [{t_start}, {t_end}) covers no frame center"
        )));
    }
    let mut v = DVector::zeros(data.ncols());
    for k in r.clone() {
        for c in 0..data.ncols() {
            v[c] += data[(k, c)] as f64;
        }
    }
    Ok(v / r.len() as f64)
}

/// Segment vector for one token, with frame centers from the manifest.
pub fn segment_vector(
    m: &LayerMatrix,
    token: &PhoneToken,
    manifest: &RepManifest,
) -> Result<DVector<f64>> {
    segment_mean(
        &m.data,
        &manifest.frame_times(m.data.nrows()),
        token.t_start,
        token.t_end,
    )
}

/// Token × dim matrix of segment vectors for one layer, reading each
/// utterance once.
pub fn segment_matrix(
    store: &RepStore,
    tokens: &[PhoneToken],
    layer: usize,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(tokens.len(), store.dim());
    let mut cache: Option<(String, LayerMatrix)> = None;
    for (i, t) in tokens.iter().enumerate() {
        if cache
            .as_ref()
            .map(|(u, _)| u != &t.utterance_id)
            .unwrap_or(true)
        {
            cache = Some((t.utterance_id.clone(), store.layer(&t.utterance_id, layer)?));
        }
        let (_, m) = cache.as_ref().expect("filled above");
        let v = segment_vector(m, t, store.manifest()).map_err(|e| {
            Error::validation(format!(
                "{} {} at {}: {e}",
                t.utterance_id, t.phone, t.t_start
            ))
        })?;
        out.row_mut(i).copy_from(&v.transpose());
    }
    Ok(out)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AccentLabel, Position};
    use proptest::prelude::*;

    fn token(utt: &str, s: f64, e: f64) -> PhoneToken {
        PhoneToken {
            utterance_id: utt.into(),
            phone: "ʋ".into(),
            word_id: "0:w".into(),
            position: Position::Initial,
            t_start: s,
            t_end: e,
            accent: AccentLabel::Mild,
        }
    }

    // 1 layer, 2 frames, dim 1, values 1.0 and -2.0, written out by hand
    const FIXTURE: [u8; 32] = [
        0x53, 0x45, 0x47, 0x52, 0x45, 0x50, 0x31, 0x01, 0x02, 0x01, 0x00, 0x00, 0x01, 0x00, 0x00,
        0x00, 0x02, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00,
        0x00, 0xc0,
    ];

    #[test]
    fn hex_fixture() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0f32, -2.0]);
        assert_eq!(encode_utterance(&[m.clone()]).unwrap(), FIXTURE.to_vec());

        let dir = tempfile::tempdir().unwrap();
        write_bytes(&dir.path().join("a.bin"), &FIXTURE).unwrap();
        let mut man = RepManifest::new("fixture", 1, 1, 0.02);
        man.utterances.push(UtteranceEntry {
            utterance_id: "a".into(),
            n_frames: 2,
            file: "a.bin".into(),
            offset: 24,
            size: 8,
        });
        fs::write(dir.path().join(MANIFEST_FILE), man.render()).unwrap();
        let store = RepStore::open(dir.path()).unwrap();
        assert_eq!(store.layer("a", 0).unwrap().data, m);
        assert_eq!(
            u16::from_le_bytes([FIXTURE[8], FIXTURE[9]]),
            BYTE_ORDER_MARKER
        );
    }

    fn store_with(layers: usize) -> (tempfile::TempDir, Vec<DMatrix<f32>>) {
        let dir = tempfile::tempdir().unwrap();
        let mats: Vec<DMatrix<f32>> = (0..layers)
            .map(|l| DMatrix::from_fn(3, 4, |r, c| (l * 100 + r * 10 + c) as f32 * 0.37 - 1.5))
            .collect();
        write_segrep(
            dir.path(),
            RepManifest::new("m", layers, 4, 0.02),
            &[("u 1".into(), mats.clone())],
        )
        .unwrap();
        (dir, mats)
    }

    #[test]
    fn round_trip_bits() {
        let (dir, mats) = store_with(2);
        let s = RepStore::open(dir.path()).unwrap();
        for (l, m) in mats.iter().enumerate() {
            let back = s.layer("u 1", l).unwrap().data;
            assert!(back
                .iter()
                .zip(m.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        s.validate().unwrap();
        assert!(!dir.path().join(LOCK_FILE).exists());
    }

    #[test]
    fn layer_count_mismatch() {
        let (dir, _) = store_with(23);
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p)
            .unwrap()
            .replace("n_layers 23", "n_layers 24");
        fs::write(&p, text).unwrap();
        let err = RepStore::open(dir.path())
            .unwrap()
            .layer("u 1", 0)
            .unwrap_err();
        assert!(err.to_string().contains("layer count mismatch"), "{err}");
    }

    #[test]
    fn endianness_and_truncation() {
        let (dir, _) = store_with(1);
        let s = RepStore::open(dir.path()).unwrap();
        let file = dir.path().join(&s.manifest().utterances[0].file);
        let good = fs::read(&file).unwrap();

        let mut swapped = good.clone();
        swapped.swap(8, 9);
        fs::write(&file, &swapped).unwrap();
        let err = s.layer("u 1", 0).unwrap_err().to_string();
        assert!(err.contains("endianness marker mismatch"), "{err}");

        fs::write(&file, &good[..good.len() - 4]).unwrap();
        assert!(s
            .layer("u 1", 0)
            .unwrap_err()
            .to_string()
            .contains("truncated file"));
        fs::write(&file, &good[..10]).unwrap();
        assert!(s
            .layer("u 1", 0)
            .unwrap_err()
            .to_string()
            .contains("truncated file"));
    }

    #[test]
    fn writer_lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let w = SegrepWriter::create(dir.path(), RepManifest::new("m", 1, 1, 0.02)).unwrap();
        assert!(SegrepWriter::create(dir.path(), RepManifest::new("m", 1, 1, 0.02)).is_err());
        drop(w);
        assert!(SegrepWriter::create(dir.path(), RepManifest::new("m", 1, 1, 0.02)).is_ok());
    }

    #[test]
    fn frame_offset_in_manifest() {
        let mut m = RepManifest::new("mfcc", 1, 13, 0.01);
        assert!((m.frame_center(2) - 0.025).abs() < 1e-15);
        m.frame_offset = Some(0.0125);
        let back = RepManifest::parse(&m.render(), Path::new("x")).unwrap();
        assert_eq!(back, m);
        assert!((back.frame_center(1) - 0.0225).abs() < 1e-15);
    }

    #[test]
    fn segment_vector_cases() {
        let man = RepManifest::new("m", 1, 2, 0.02);
        // centers 0.01, 0.03, 0.05
        let lm = LayerMatrix {
            layer: 0,
            data: DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 3.0, 3.0, 7.0, -1.0]),
        };
        let one = segment_vector(&lm, &token("u", 0.02, 0.04), &man).unwrap();
        assert_eq!(one.as_slice(), &[3.0, 3.0]);
        let two = segment_vector(&lm, &token("u", 0.0, 0.04), &man).unwrap();
        assert_eq!(two.as_slice(), &[2.0, 2.0]);
        let err = segment_vector(&lm, &token("u", -0.5, -0.1), &man).unwrap_err();
        assert!(err.to_string().contains("segment shorter than frame hop"));
        assert!(segment_vector(&lm, &token("u", 0.011, 0.029), &man).is_err());
    }

    #[test]
    fn segment_matrix_reads_store() {
        let (dir, mats) = store_with(2);
        let s = RepStore::open(dir.path()).unwrap();
        let toks = vec![token("u 1", 0.0, 0.02), token("u 1", 0.02, 0.06)];
        let m = segment_matrix(&s, &toks, 1).unwrap();
        for c in 0..4 {
            assert_eq!(m[(0, c)], mats[1][(0, c)] as f64);
            assert!(
                (m[(1, c)] - (mats[1][(1, c)] as f64 + mats[1][(2, c)] as f64) / 2.0).abs() < 1e-12
            );
        }
    }

    proptest! {
        #[test]
        fn round_trip_random(vals in prop::collection::vec(-1e6f32..1e6, 12), layers in 1usize..4) {
            let dir = tempfile::tempdir().unwrap();
            let mats: Vec<DMatrix<f32>> = (0..layers)
                .map(|l| DMatrix::from_row_slice(3, 4, &vals).map(|v| v + l as f32))
                .collect();
            write_segrep(dir.path(), RepManifest::new("p", layers, 4, 0.02), &[("x".into(), mats.clone())]).unwrap();
            let s = RepStore::open(dir.path()).unwrap();
            for (l, m) in mats.iter().enumerate() {
                prop_assert_eq!(&s.layer("x", l).unwrap().data, m);
            }
        }

        #[test]
        fn segment_mean_in_hull_and_order_free(
            rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 3), 1..12),
            seed in 0u64..1000,
        ) {
            let n = rows.len();
            let flat: Vec<f32> = rows.iter().flatten().copied().collect();
            let data = DMatrix::from_row_slice(n, 3, &flat);
            let times: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * 0.02).collect();
            let v = segment_mean(&data, &times, 0.0, n as f64 * 0.02).unwrap();
            for c in 0..3 {
                let col = data.column(c);
                prop_assert!(v[c] >= col.min() as f64 - 1e-9 && v[c] <= col.max() as f64 + 1e-9);
            }
            // permuting covered rows leaves the mean unchanged
            let mut idx: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed));
            let permuted = data.select_rows(&idx);
            let w = segment_mean(&permuted, &times, 0.0, n as f64 * 0.02).unwrap();
            prop_assert!((v - w).amax() < 1e-9);
        }
    }
}
