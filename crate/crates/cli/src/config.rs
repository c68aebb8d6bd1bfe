//! Run configuration, read from a single TOML file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. The config hash is computed over the file's settings as written
//! (after command-line overrides), so moving a corpus does not change it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segprobe_core::corpus::{AlignmentConfig, Position};
use segprobe_core::distregress::{RegressionSpec, DEFAULT_BANK_CAP};
use segprobe_core::mfcc::MfccConfig;
use segprobe_core::phonfeat::{FeatureMapping, FeatureModelConfig, Optimizer, PairTable};
use segprobe_core::probe::{LambdaGrid, ProbeConfig, ProbeKind, SolverOptions};
use segprobe_core::svcca::{BaselineMode, CcaConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Target segments as aligned in the rated speech (non-native members).
    pub segments: Vec<String>,
    pub paths: Paths,
    /// Representation name to SEGREP1 directory.
    #[serde(default)]
    pub representations: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub alignment: AlignmentSection,
    #[serde(default)]
    pub mfcc: MfccSection,
    #[serde(default)]
    pub phonet: PhonetSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub cca: CcaSection,
    #[serde(default)]
    pub regression: RegressionSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub textgrids: PathBuf,
    pub ratings: PathBuf,
    /// Tab-separated `utterance_id`, `variety` (AE or IE).
    pub baseline_list: PathBuf,
    /// Directory of `<utterance_id>.wav`.
    pub audio: PathBuf,
    pub pairs: Option<PathBuf>,
    pub feature_mapping: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentSection {
    pub phone_tier: String,
    pub word_tier: String,
    pub tolerance: f64,
    pub whole_word_position: String,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        let a = AlignmentConfig::default();
        AlignmentSection {
            phone_tier: a.phone_tier,
            word_tier: a.word_tier,
            tolerance: a.tolerance,
            whole_word_position: a.whole_word_position.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MfccSection {
    pub sample_rate: u32,
    pub window: f64,
    pub hop: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub preemphasis: f64,
    /// Also probe the MFCC frames as a one-layer representation.
    pub probe: bool,
}

impl Default for MfccSection {
    fn default() -> Self {
        let m = MfccConfig::default();
        MfccSection {
            sample_rate: m.sample_rate,
            window: m.window,
            hop: m.hop,
            n_fft: m.n_fft,
            n_mels: m.n_mels,
            n_coeffs: m.n_coeffs,
            preemphasis: m.preemphasis,
            probe: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PhonetSection {
    pub hidden: usize,
    pub context: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// "adam" or "gd"
    pub optimizer: String,
    /// Every k-th utterance (in sorted order) is held out for the
    /// per-feature score table.
    pub eval_every: usize,
}

impl Default for PhonetSection {
    fn default() -> Self {
        let c = FeatureModelConfig::default();
        PhonetSection {
            hidden: c.hidden,
            context: c.context,
            learning_rate: c.learning_rate,
            max_epochs: c.max_epochs,
            patience: c.patience,
            batch_size: c.batch_size,
            validation_fraction: c.validation_fraction,
            optimizer: "adam".into(),
            eval_every: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub kinds: Vec<String>,
    pub n_lambdas: usize,
    pub min_ratio: f64,
    pub cv_folds: usize,
    pub test_fraction: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        let (n, min_ratio) = match LambdaGrid::default() {
            LambdaGrid::Auto { n, min_ratio } => (n, min_ratio),
            LambdaGrid::Explicit(v) => (v.len(), 1e-4),
        };
        ProbeSection {
            kinds: ProbeKind::ALL
                .iter()
                .map(|k| k.as_str().to_string())
                .collect(),
            n_lambdas: n,
            min_ratio,
            cv_folds: p.cv_folds,
            test_fraction: p.test_fraction,
            tol: p.solver.tol,
            max_iter: p.solver.max_iter,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CcaSection {
    pub variance_kept: f64,
    pub ridge: f64,
    /// "pooled" or "accent_filtered"
    pub baseline_mode: String,
}

impl Default for CcaSection {
    fn default() -> Self {
        let c = CcaConfig::default();
        CcaSection {
            variance_kept: c.variance_kept,
            ridge: c.ridge,
            baseline_mode: "pooled".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    /// Baseline vectors kept per bank; 0 keeps all.
    pub bank_cap: usize,
    pub standardize: bool,
    pub interactions: bool,
    pub projection: bool,
}

impl Default for RegressionSection {
    fn default() -> Self {
        RegressionSection {
            bank_cap: DEFAULT_BANK_CAP,
            standardize: true,
            interactions: true,
            projection: true,
        }
    }
}

/// A parsed config together with where its relative paths point.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub cfg: RunConfig,
    pub base: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Loaded, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Loaded { cfg, base })
    }

    /// Hex SHA-256 prefix over the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn alignment(&self) -> Result<AlignmentConfig, CliError> {
        let a = &self.alignment;
        let whole: Position = a
            .whole_word_position
            .parse()
            .map_err(|e| CliError::config(format!("alignment.whole_word_position: {e}")))?;
        if !(a.tolerance >= 0.0) {
            return Err(CliError::config("alignment.tolerance must be non-negative"));
        }
        Ok(AlignmentConfig {
            phone_tier: a.phone_tier.clone(),
            word_tier: a.word_tier.clone(),
            tolerance: a.tolerance,
            whole_word_position: whole,
        })
    }

    pub fn mfcc(&self) -> MfccConfig {
        let m = &self.mfcc;
        MfccConfig {
            sample_rate: m.sample_rate,
            window: m.window,
            hop: m.hop,
            n_fft: m.n_fft,
            n_mels: m.n_mels,
            n_coeffs: m.n_coeffs,
            preemphasis: m.preemphasis,
            ..MfccConfig::default()
        }
    }

    pub fn phonet(&self) -> Result<FeatureModelConfig, CliError> {
        let p = &self.phonet;
        let optimizer = match p.optimizer.to_ascii_lowercase().as_str() {
            "adam" => Optimizer::Adam,
            "gd" | "sgd" | "gradient_descent" => Optimizer::GradientDescent,
            other => {
                return Err(CliError::config(format!(
                    "phonet.optimizer: unknown {other:?}"
                )))
            }
        };
        if p.eval_every < 2 {
            return Err(CliError::config("phonet.eval_every must be at least 2"));
        }
        Ok(FeatureModelConfig {
            hidden: p.hidden,
            context: p.context,
            learning_rate: p.learning_rate,
            max_epochs: p.max_epochs,
            patience: p.patience,
            batch_size: p.batch_size,
            validation_fraction: p.validation_fraction,
            optimizer,
            seed: self.seed,
        })
    }

    pub fn probe_kinds(&self) -> Result<Vec<ProbeKind>, CliError> {
        if self.probe.kinds.is_empty() {
            return Err(CliError::config("probe.kinds is empty"));
        }
        let mut seen = BTreeSet::new();
        self.probe
            .kinds
            .iter()
            .map(|k| {
                let kind: ProbeKind = k
                    .parse()
                    .map_err(|e| CliError::config(format!("probe.kinds: {e}")))?;
                if !seen.insert(kind.as_str()) {
                    return Err(CliError::config(format!("probe.kinds lists {k} twice")));
                }
                Ok(kind)
            })
            .collect()
    }

    pub fn probe_config(&self, kind: ProbeKind) -> Result<ProbeConfig, CliError> {
        let p = &self.probe;
        let c = ProbeConfig {
            kind,
            lambda_grid: LambdaGrid::Auto {
                n: p.n_lambdas,
                min_ratio: p.min_ratio,
            },
            cv_folds: p.cv_folds,
            test_fraction: p.test_fraction,
            seed: self.seed,
            solver: SolverOptions {
                tol: p.tol,
                max_iter: p.max_iter,
            },
        };
        c.validate()
            .map_err(|e| CliError::config(format!("probe: {e}")))?;
        Ok(c)
    }

    pub fn cca(&self) -> Result<(CcaConfig, BaselineMode), CliError> {
        let c = CcaConfig {
            variance_kept: self.cca.variance_kept,
            ridge: self.cca.ridge,
        };
        c.validate()
            .map_err(|e| CliError::config(format!("cca: {e}")))?;
        let mode = self
            .cca
            .baseline_mode
            .parse()
            .map_err(|e| CliError::config(format!("cca.baseline_mode: {e}")))?;
        Ok((c, mode))
    }

    pub fn regression(&self) -> RegressionSpec {
        RegressionSpec {
            main_effects: true,
            interactions: self.regression.interactions,
            standardize: self.regression.standardize,
        }
    }

    pub fn bank_cap(&self) -> Option<usize> {
        (self.regression.bank_cap > 0).then_some(self.regression.bank_cap)
    }
}

impl Loaded {
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.path(&self.cfg.output_dir)
    }

    pub fn pairs(&self) -> Result<PairTable, CliError> {
        match &self.cfg.paths.pairs {
            Some(p) => PairTable::load(&self.path(p)).map_err(|e| CliError::config(e.to_string())),
            None => Ok(PairTable::builtin()),
        }
    }

    pub fn mapping(&self) -> Result<FeatureMapping, CliError> {
        match &self.cfg.paths.feature_mapping {
            Some(p) => {
                FeatureMapping::load(&self.path(p)).map_err(|e| CliError::config(e.to_string()))
            }
            None => Ok(FeatureMapping::builtin()),
        }
    }

    /// Checks that every referenced path exists and that the settings are
    /// usable, without touching any stage output.
    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.cfg;
        if c.segments.is_empty() {
            return Err(CliError::config("segments is empty"));
        }
        let mut seen = BTreeSet::new();
        for s in &c.segments {
            if !seen.insert(s) {
                return Err(CliError::config(format!("segment {s} listed twice")));
            }
        }
        let p = &c.paths;
        let mut required: Vec<(&str, &PathBuf)> = vec![
            ("paths.textgrids", &p.textgrids),
            ("paths.ratings", &p.ratings),
            ("paths.baseline_list", &p.baseline_list),
            ("paths.audio", &p.audio),
        ];
        if let Some(x) = &p.pairs {
            required.push(("paths.pairs", x));
        }
        if let Some(x) = &p.feature_mapping {
            required.push(("paths.feature_mapping", x));
        }
        for (name, rel) in &c.representations {
            if name == crate::stages::MFCC_REP
                || name.is_empty()
                || name.contains(char::is_whitespace)
            {
                return Err(CliError::config(format!(
                    "representation name {name:?} is reserved or invalid"
                )));
            }
            if !self.path(rel).exists() {
                return Err(CliError::config(format!(
                    "representations.{name}: {} does not exist",
                    self.path(rel).display()
                )));
            }
        }
        for (name, rel) in required {
            if !self.path(rel).exists() {
                return Err(CliError::config(format!(
                    "{name}: {} does not exist",
                    self.path(rel).display()
                )));
            }
        }
        if c.representations.is_empty() && !c.mfcc.probe {
            return Err(CliError::config("no representations to probe"));
        }
        let pairs = self.pairs()?;
        let mapping = self.mapping()?;
        for s in &c.segments {
            let Some(pair) = pairs.for_target(s) else {
                return Err(CliError::config(format!(
                    "pair mapping does not cover segment {s}"
                )));
            };
            for phone in [&pair.native, &pair.nonnative] {
                if !mapping.contains(phone) {
                    return Err(CliError::config(format!(
                        "feature mapping has no entry for {phone}"
                    )));
                }
            }
        }
        self.cfg.alignment()?;
        self.cfg
            .mfcc()
            .validate()
            .map_err(|e| CliError::config(format!("mfcc: {e}")))?;
        self.cfg.phonet()?;
        for k in self.cfg.probe_kinds()? {
            self.cfg.probe_config(k)?;
        }
        self.cfg.cca()?;
        Ok(())
    }
}
