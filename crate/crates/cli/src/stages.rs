//! Pipeline stages. Each stage writes into `<output_dir>/<stage>/` and drops
//! a `.complete` stamp holding the config hash when it finishes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use segprobe_core::corpus::{
    extract_tokens, merge_ratings, parse_textgrid, read_ratings, read_tokens,
    tabulate_distribution, tokens_table, AccentLabel, PhoneToken,
};
use segprobe_core::distregress::{
    coefficient_table, compute_distances, distance_table, fit_multinomial, project_2d,
    records_from_table, regression_table, BaselineBank, RegressionRun, Variety,
};
use segprobe_core::mfcc::{read_wav, FrameMatrix, MfccExtractor};
use segprobe_core::phonfeat::{
    evaluate_features, feature_index, label_frames, score_segments, scores_table, FeatureModel,
    TrainingSet, FEATURES,
};
use segprobe_core::probe::{
    best_layer_table, layer_scores_table, layer_sweep, ProbeKind, ProbeRun,
};
use segprobe_core::repstore::{segment_matrix, RepManifest, RepStore, SegrepWriter};
use segprobe_core::svcca::{analyze, correlation_table, weight_table, CcaInput};
use segprobe_core::table::{fmt_f, Table};

use crate::config::Loaded;
use crate::error::CliError;

pub const MFCC_REP: &str = "mfcc";
const STAMP: &str = ".complete";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const REPORT_FILES: [&str; 7] = [
    "token_distribution.tsv",
    "best_layer_f1.tsv",
    "layer_scores.tsv",
    "log_odds.tsv",
    "feature_scores.tsv",
    "relative_weights.tsv",
    "feature_correlations.tsv",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Mfcc,
    PhonetTrain,
    PhonetScore,
    Probe,
    Svcca,
    Distance,
    Regress,
    Report,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Mfcc,
        Stage::PhonetTrain,
        Stage::PhonetScore,
        Stage::Probe,
        Stage::Svcca,
        Stage::Distance,
        Stage::Regress,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Mfcc => "mfcc",
            Stage::PhonetTrain => "phonet-train",
            Stage::PhonetScore => "phonet-score",
            Stage::Probe => "probe",
            Stage::Svcca => "svcca",
            Stage::Distance => "distance",
            Stage::Regress => "regress",
            Stage::Report => "report",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Mfcc => &[Stage::Ingest],
            Stage::PhonetTrain => &[Stage::Ingest, Stage::Mfcc],
            Stage::PhonetScore => &[Stage::Ingest, Stage::Mfcc, Stage::PhonetTrain],
            Stage::Probe => &[Stage::Ingest, Stage::Mfcc],
            Stage::Svcca => &[Stage::Ingest, Stage::Mfcc, Stage::PhonetScore, Stage::Probe],
            Stage::Distance => &[Stage::Ingest, Stage::Mfcc, Stage::Probe],
            Stage::Regress => &[Stage::Distance],
            Stage::Report => &[
                Stage::Ingest,
                Stage::PhonetTrain,
                Stage::Probe,
                Stage::Svcca,
                Stage::Regress,
            ],
        }
    }

    fn depends_on(self, other: Stage) -> bool {
        self.deps()
            .iter()
            .any(|&d| d == other || d.depends_on(other))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CliError::config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

#[derive(Serialize)]
struct LogEntry<'a> {
    stage: &'a str,
    status: &'a str,
    config_hash: &'a str,
    seed: u64,
    seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub struct Ctx {
    pub loaded: Loaded,
    pub hash: String,
    pub out: PathBuf,
    pub force: bool,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::config(format!("{}: {e}", path.display()))
}

impl Ctx {
    pub fn new(loaded: Loaded, force: bool) -> Self {
        let hash = loaded.cfg.hash();
        let out = loaded.output_dir();
        Ctx {
            loaded,
            hash,
            out,
            force,
        }
    }

    pub fn dir(&self, s: Stage) -> PathBuf {
        self.out.join(s.name())
    }

    fn comments(&self) -> Vec<String> {
        vec![
            format!("config_hash {}", self.hash),
            format!("seed {}", self.loaded.cfg.seed),
        ]
    }

    pub fn is_complete(&self, s: Stage) -> bool {
        fs::read_to_string(self.dir(s).join(STAMP)).is_ok_and(|h| h.trim() == self.hash)
    }

    fn write_table(&self, s: Stage, name: &str, t: &Table) -> Result<(), CliError> {
        t.write(&self.dir(s).join(name), &self.comments())?;
        Ok(())
    }

    fn read_table(&self, s: Stage, name: &str) -> Result<Table, CliError> {
        Ok(Table::read(&self.dir(s).join(name))?)
    }

    fn log(
        &self,
        stage: Stage,
        status: &str,
        seconds: f64,
        error: Option<&str>,
    ) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))?;
        let path = self.out.join(RUN_LOG);
        let entry = LogEntry {
            stage: stage.name(),
            status,
            config_hash: &self.hash,
            seed: self.loaded.cfg.seed,
            seconds,
            error,
        };
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        writeln!(
            f,
            "{}",
            serde_json::to_string(&entry).expect("log entry serializes")
        )
        .map_err(|e| io_err(&path, e))
    }

    fn segments(&self) -> &[String] {
        &self.loaded.cfg.segments
    }

    fn textgrid_dir(&self) -> PathBuf {
        self.loaded.path(&self.loaded.cfg.paths.textgrids)
    }

    fn mfcc_store(&self) -> Result<RepStore, CliError> {
        Ok(RepStore::open(&self.dir(Stage::Mfcc).join("segrep"))?)
    }

    /// Representations to probe, MFCC first.
    fn representations(&self) -> Vec<(String, PathBuf)> {
        let mut v = Vec::new();
        if self.loaded.cfg.mfcc.probe {
            v.push((MFCC_REP.to_string(), self.dir(Stage::Mfcc).join("segrep")));
        }
        for (name, p) in &self.loaded.cfg.representations {
            v.push((name.clone(), self.loaded.path(p)));
        }
        v
    }

    fn open_rep(&self, name: &str) -> Result<RepStore, CliError> {
        let (_, p) = self
            .representations()
            .into_iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| CliError::config(format!("unknown representation {name:?}")))?;
        Ok(RepStore::open(&p)?)
    }
}

/// Run one stage after checking its dependencies. A stage already complete
/// under the current config is skipped unless `force` is set.
pub fn run_stage(ctx: &Ctx, stage: Stage) -> Result<Outcome, CliError> {
    for &d in stage.deps() {
        if !ctx.is_complete(d) {
            return Err(CliError::missing(d.name(), stage.name()));
        }
    }
    if !ctx.force && ctx.is_complete(stage) {
        log::info!("{stage}: up to date");
        ctx.log(stage, "skipped", 0.0, None)?;
        return Ok(Outcome::Skipped);
    }
    let dir = ctx.dir(stage);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    // anything built on the old output is now stale
    for later in Stage::ALL.into_iter().filter(|s| s.depends_on(stage)) {
        let _ = fs::remove_file(ctx.dir(later).join(STAMP));
    }
    log::info!("{stage}: running");
    let t0 = Instant::now();
    let result = match stage {
        Stage::Ingest => ingest(ctx),
        Stage::Mfcc => mfcc(ctx),
        Stage::PhonetTrain => phonet_train(ctx),
        Stage::PhonetScore => phonet_score(ctx),
        Stage::Probe => probe(ctx),
        Stage::Svcca => svcca(ctx),
        Stage::Distance => distance(ctx),
        Stage::Regress => regress(ctx),
        Stage::Report => report(ctx),
    };
    let secs = t0.elapsed().as_secs_f64();
    match result {
        Ok(()) => {
            ctx.log(stage, "ok", secs, None)?;
            let stamp = dir.join(STAMP);
            fs::write(&stamp, &ctx.hash).map_err(|e| io_err(&stamp, e))?;
            Ok(Outcome::Ran)
        }
        Err(e) => {
            let e = e.context(stage);
            ctx.log(stage, "error", secs, Some(&e.message))?;
            Err(e)
        }
    }
}

// ---- ingest ----

const UTTERANCES: &str = "utterances.tsv";
const TOKENS: &str = "tokens.tsv";
const BASELINE_TOKENS: &str = "baseline_tokens.tsv";

struct Utterance {
    id: String,
    textgrid: String,
}

fn ingest(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.loaded.cfg;
    let acfg = cfg.alignment()?;
    let pairs = ctx.loaded.pairs()?;
    let tg_dir = ctx.textgrid_dir();
    let mut files: Vec<PathBuf> = fs::read_dir(&tg_dir)
        .map_err(|e| io_err(&tg_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|x| x.eq_ignore_ascii_case("textgrid"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::config(format!(
            "no TextGrid files in {}",
            tg_dir.display()
        )));
    }

    let mut ratings = BTreeMap::new();
    for row in read_ratings(&ctx.loaded.path(&cfg.paths.ratings))? {
        let label = merge_ratings(&row.ratings)
            .map_err(|e| CliError::from(e).context(&row.utterance_id))?;
        if ratings.insert(row.utterance_id.clone(), label).is_some() {
            return Err(CliError::config(format!(
                "utterance {} rated twice",
                row.utterance_id
            )));
        }
    }
    let baseline = read_baseline_list(&ctx.loaded.path(&cfg.paths.baseline_list))?;

    let targets: BTreeSet<String> = ctx.segments().iter().cloned().collect();
    let natives: BTreeSet<String> = ctx
        .segments()
        .iter()
        .filter_map(|s| pairs.for_target(s).map(|p| p.native.clone()))
        .collect();

    let mut tokens = Vec::new();
    let mut base_tokens = Vec::new();
    let mut base_variety = Vec::new();
    let mut utts = Table::new(&["utterance_id", "role", "label", "textgrid"]);
    let mut seen = BTreeSet::new();
    for f in &files {
        let a = parse_textgrid(f, &acfg)?;
        let id = a.utterance_id.clone();
        seen.insert(id.clone());
        let file = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match (ratings.get(&id), baseline.get(&id)) {
            (Some(_), Some(_)) => {
                return Err(CliError::config(format!(
                    "{id} is both rated and a baseline utterance"
                )));
            }
            (Some(&accent), None) => {
                tokens.extend(extract_tokens(&a, &targets, accent, &acfg)?);
                utts.push(vec![id, "rated".into(), accent.to_string(), file]);
            }
            (None, Some(&variety)) => {
                let set = match variety {
                    Variety::Ae => &natives,
                    Variety::Ie => &targets,
                };
                for t in extract_tokens(&a, set, AccentLabel::NoNegligible, &acfg)? {
                    base_tokens.push(t);
                    base_variety.push(variety);
                }
                utts.push(vec![id, "baseline".into(), variety.to_string(), file]);
            }
            (None, None) => log::warn!("{id}: neither rated nor in the baseline list, skipped"),
        }
    }
    for id in ratings.keys().filter(|id| !seen.contains(*id)) {
        log::warn!("{id}: rated but no alignment found");
    }
    if tokens.is_empty() {
        return Err(CliError::config(
            "no target tokens found in rated utterances",
        ));
    }
    let mut bt = tokens_table(&base_tokens);
    bt.columns.push("variety".into());
    for (row, v) in bt.rows.iter_mut().zip(&base_variety) {
        row.push(v.to_string());
    }
    ctx.write_table(Stage::Ingest, TOKENS, &tokens_table(&tokens))?;
    ctx.write_table(Stage::Ingest, BASELINE_TOKENS, &bt)?;
    ctx.write_table(Stage::Ingest, UTTERANCES, &utts)?;
    ctx.write_table(
        Stage::Ingest,
        "distribution.tsv",
        &tabulate_distribution(&tokens, ctx.segments()).to_table(),
    )?;
    Ok(())
}

fn read_baseline_list(path: &Path) -> Result<BTreeMap<String, Variety>, CliError> {
    let t = Table::read(path)?;
    let (i, v) = (t.require("utterance_id")?, t.require("variety")?);
    let mut m = BTreeMap::new();
    for r in &t.rows {
        let variety: Variety = r[v].parse()?;
        if m.insert(r[i].clone(), variety).is_some() {
            return Err(CliError::config(format!(
                "{} listed twice in {}",
                r[i],
                path.display()
            )));
        }
    }
    Ok(m)
}

fn read_utterances(ctx: &Ctx) -> Result<Vec<Utterance>, CliError> {
    let t = ctx.read_table(Stage::Ingest, UTTERANCES)?;
    let (i, f) = (t.require("utterance_id")?, t.require("textgrid")?);
    Ok(t.rows
        .iter()
        .map(|r| Utterance {
            id: r[i].clone(),
            textgrid: r[f].clone(),
        })
        .collect())
}

fn rated_tokens(ctx: &Ctx) -> Result<Vec<PhoneToken>, CliError> {
    Ok(read_tokens(&ctx.dir(Stage::Ingest).join(TOKENS))?)
}

fn baseline_tokens(ctx: &Ctx) -> Result<Vec<(PhoneToken, Variety)>, CliError> {
    let path = ctx.dir(Stage::Ingest).join(BASELINE_TOKENS);
    let toks = read_tokens(&path)?;
    let t = Table::read(&path)?;
    let v = t.require("variety")?;
    toks.into_iter()
        .zip(&t.rows)
        .map(|(tok, r)| Ok((tok, r[v].parse()?)))
        .collect()
}

// ---- mfcc ----

fn mfcc(ctx: &Ctx) -> Result<(), CliError> {
    let mcfg = ctx.loaded.cfg.mfcc();
    let ext = MfccExtractor::new(mcfg.clone())?;
    let audio = ctx.loaded.path(&ctx.loaded.cfg.paths.audio);
    let utts = read_utterances(ctx)?;
    let frames: Vec<DMatrix<f32>> = utts
        .par_iter()
        .map(|u| {
            let path = audio.join(format!("{}.wav", u.id));
            if !path.exists() {
                return Err(CliError::config(format!(
                    "missing audio {}",
                    path.display()
                )));
            }
            let (sig, sr) = read_wav(&path)?;
            if sr != mcfg.sample_rate {
                return Err(CliError::config(format!(
                    "{}: sample rate {sr} but mfcc.sample_rate is {}",
                    path.display(),
                    mcfg.sample_rate
                )));
            }
            Ok(ext.compute(&sig, sr)?.data.map(|v| v as f32))
        })
        .collect::<Result<_, CliError>>()?;
    let mut m = RepManifest::new(MFCC_REP, 1, mcfg.n_coeffs, mcfg.hop);
    m.frame_offset = Some(mcfg.frame_offset());
    m.layer_indexing = Some("0=mfcc".into());
    let mut w = SegrepWriter::create(&ctx.dir(Stage::Mfcc).join("segrep"), m)?;
    for (u, f) in utts.iter().zip(frames) {
        w.write_utterance(&u.id, &[f])?;
    }
    w.finish()?;
    Ok(())
}

fn frame_matrix(store: &RepStore, id: &str) -> Result<FrameMatrix, CliError> {
    let m = store.layer(id, 0)?;
    Ok(FrameMatrix {
        data: m.data.map(f64::from),
        frame_times: store.frame_times(id)?,
    })
}

// ---- phonet ----

const MODEL_FILE: &str = "model.bin";
const PROFILES: &str = "profiles.tsv";

fn phonet_train(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.loaded.cfg;
    let pcfg = cfg.phonet()?;
    let acfg = cfg.alignment()?;
    let mapping = ctx.loaded.mapping()?;
    let store = ctx.mfcc_store()?;
    let every = cfg.phonet.eval_every;
    let mut train = TrainingSet::default();
    let mut heldout = TrainingSet::default();
    for (i, u) in read_utterances(ctx)?.iter().enumerate() {
        let a = parse_textgrid(&ctx.textgrid_dir().join(&u.textgrid), &acfg)?;
        let fm = frame_matrix(&store, &u.id)?;
        let labels = label_frames(&a, &mapping, &fm.frame_times)?;
        if i % every == every - 1 {
            heldout.push(fm, labels)?;
        } else {
            train.push(fm, labels)?;
        }
    }
    if heldout.items.is_empty() {
        return Err(CliError::config(format!(
            "fewer than {every} utterances; nothing held out for feature scoring"
        )));
    }
    let (model, rep) = FeatureModel::train(&train, &pcfg)?;
    model.save(&ctx.dir(Stage::PhonetTrain).join(MODEL_FILE))?;
    ctx.write_table(
        Stage::PhonetTrain,
        "feature_scores.tsv",
        &scores_table(&evaluate_features(&model, &heldout)?),
    )?;
    let mut log = Table::new(&["epoch", "train_loss", "val_loss", "best"]);
    for (e, (tl, vl)) in rep.train_loss.iter().zip(&rep.val_loss).enumerate() {
        log.push(vec![
            (e + 1).to_string(),
            fmt_f(*tl, 6),
            fmt_f(*vl, 6),
            (e + 1 == rep.best_epoch).to_string(),
        ]);
    }
    ctx.write_table(Stage::PhonetTrain, "training.tsv", &log)?;
    let mut constant = Table::new(&["feature", "probability"]);
    for (f, p) in &rep.constant_features {
        constant.push(vec![f.clone(), fmt_f(*p, 6)]);
    }
    ctx.write_table(Stage::PhonetTrain, "constant_heads.tsv", &constant)?;
    Ok(())
}

fn phonet_score(ctx: &Ctx) -> Result<(), CliError> {
    let model = FeatureModel::load(&ctx.dir(Stage::PhonetTrain).join(MODEL_FILE))?;
    let store = ctx.mfcc_store()?;
    let tokens = rated_tokens(ctx)?;
    let mut by_utt: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tokens.iter().enumerate() {
        by_utt.entry(&t.utterance_id).or_default().push(i);
    }
    let groups: Vec<(&str, Vec<usize>)> = by_utt.into_iter().collect();
    let scored: Vec<Vec<(usize, Vec<f64>)>> = groups
        .par_iter()
        .map(|(id, idx)| {
            let fm = frame_matrix(&store, id)?;
            let toks: Vec<PhoneToken> = idx.iter().map(|&i| tokens[i].clone()).collect();
            let prof =
                score_segments(&model, &fm, &toks).map_err(|e| CliError::from(e).context(id))?;
            Ok(idx
                .iter()
                .copied()
                .zip(prof.into_iter().map(|p| p.probs))
                .collect())
        })
        .collect::<Result<_, CliError>>()?;
    let mut probs = vec![Vec::new(); tokens.len()];
    for (i, p) in scored.into_iter().flatten() {
        probs[i] = p;
    }
    let mut t = tokens_table(&tokens);
    t.columns.extend(FEATURES.iter().map(|f| f.to_string()));
    for (row, p) in t.rows.iter_mut().zip(&probs) {
        row.extend(p.iter().map(|v| fmt_f(*v, 6)));
    }
    ctx.write_table(Stage::PhonetScore, PROFILES, &t)
}

// ---- probe ----

const SELECTED: &str = "selected.tsv";

fn segment_tokens(tokens: &[PhoneToken], seg: &str) -> (Vec<usize>, Vec<PhoneToken>) {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.phone == seg)
        .map(|(i, t)| (i, t.clone()))
        .unzip()
}

fn probe(ctx: &Ctx) -> Result<(), CliError> {
    let kinds = ctx.loaded.cfg.probe_kinds()?;
    let tokens = rated_tokens(ctx)?;
    let mut runs = Vec::new();
    let mut sel = Table::new(&[
        "segment",
        "representation",
        "probe",
        "best_layer",
        "n_selected",
        "selected",
    ]);
    for (rep, path) in ctx.representations() {
        let store = RepStore::open(&path)?;
        for seg in ctx.segments() {
            let (_, toks) = segment_tokens(&tokens, seg);
            if toks.is_empty() {
                return Err(CliError::config(format!(
                    "no rated tokens of segment {seg}"
                )));
            }
            for &kind in &kinds {
                let pcfg = ctx.loaded.cfg.probe_config(kind)?;
                let result = layer_sweep(&store, &toks, &pcfg)
                    .map_err(|e| CliError::from(e).context(format!("{rep} {seg} {kind}")))?;
                let list: Vec<String> = result
                    .selected_features
                    .iter()
                    .map(usize::to_string)
                    .collect();
                sel.push(vec![
                    seg.clone(),
                    rep.clone(),
                    kind.as_str().into(),
                    result.best_layer.to_string(),
                    list.len().to_string(),
                    if list.is_empty() {
                        "-".into()
                    } else {
                        list.join(",")
                    },
                ]);
                runs.push(ProbeRun {
                    segment: seg.clone(),
                    representation: rep.clone(),
                    result,
                });
            }
        }
    }
    ctx.write_table(Stage::Probe, "layer_scores.tsv", &layer_scores_table(&runs))?;
    ctx.write_table(Stage::Probe, "best_layers.tsv", &best_layer_table(&runs))?;
    ctx.write_table(Stage::Probe, SELECTED, &sel)
}

struct Selection {
    segment: String,
    representation: String,
    probe: String,
    layer: usize,
    features: Vec<usize>,
}

fn read_selection(ctx: &Ctx) -> Result<Vec<Selection>, CliError> {
    let t = ctx.read_table(Stage::Probe, SELECTED)?;
    let c: Vec<usize> = [
        "segment",
        "representation",
        "probe",
        "best_layer",
        "selected",
    ]
    .iter()
    .map(|n| t.require(n))
    .collect::<Result<_, _>>()?;
    let bad = |s: &str| CliError::config(format!("bad entry {s:?} in {SELECTED}"));
    t.rows
        .iter()
        .map(|r| {
            let features = if r[c[4]] == "-" {
                Vec::new()
            } else {
                r[c[4]]
                    .split(',')
                    .map(|v| v.parse().map_err(|_| bad(v)))
                    .collect::<Result<_, _>>()?
            };
            Ok(Selection {
                segment: r[c[0]].clone(),
                representation: r[c[1]].clone(),
                probe: r[c[2]].clone(),
                layer: r[c[3]].parse().map_err(|_| bad(&r[c[3]]))?,
                features,
            })
        })
        .collect()
}

// ---- svcca ----

fn svcca(ctx: &Ctx) -> Result<(), CliError> {
    let (cca, mode) = ctx.loaded.cfg.cca()?;
    let pairs = ctx.loaded.pairs()?;
    let tokens = rated_tokens(ctx)?;
    let prof = ctx.read_table(Stage::PhonetScore, PROFILES)?;
    if prof.rows.len() != tokens.len() {
        return Err(CliError::config(
            "profile table does not match the token table",
        ));
    }
    let fcols: Vec<usize> = FEATURES
        .iter()
        .map(|f| prof.require(f))
        .collect::<Result<_, _>>()?;
    let mut corr = Vec::new();
    let mut weights = Vec::new();
    for s in read_selection(ctx)? {
        let pair = pairs
            .for_target(&s.segment)
            .ok_or_else(|| CliError::config(format!("no pair for {}", s.segment)))?;
        let features: Vec<(String, usize)> = pair
            .feature_list()
            .into_iter()
            .map(|f| {
                let i = feature_index(&f).expect("pair features are validated");
                (f, i)
            })
            .collect();
        let (idx, toks) = segment_tokens(&tokens, &s.segment);
        let store = ctx.open_rep(&s.representation)?;
        let full = segment_matrix(&store, &toks, s.layer)?;
        let profiles = DMatrix::from_fn(idx.len(), FEATURES.len(), |r, f| {
            prof.rows[idx[r]][fcols[f]]
                .parse::<f64>()
                .unwrap_or(f64::NAN)
        });
        let input = CcaInput {
            segment: &s.segment,
            representation: &s.representation,
            probe: &s.probe,
            tokens: &toks,
            full: &full,
            selected: &s.features,
            profiles: &profiles,
            features: &features,
        };
        let (c, w) = analyze(&input, mode, &cca).map_err(|e| {
            CliError::from(e).context(format!("{} {} {}", s.representation, s.segment, s.probe))
        })?;
        corr.extend(c);
        weights.extend(w);
    }
    ctx.write_table(Stage::Svcca, "correlations.tsv", &correlation_table(&corr))?;
    ctx.write_table(
        Stage::Svcca,
        "relative_weights.tsv",
        &weight_table(&weights),
    )
}

// ---- distance and regression ----

const DISTANCES: &str = "distances.tsv";

fn prefixed(t: Table, cols: &[(&str, String)]) -> Table {
    let mut out = Table::new(
        &cols
            .iter()
            .map(|c| c.0)
            .chain(t.columns.iter().map(String::as_str))
            .collect::<Vec<_>>(),
    );
    for r in t.rows {
        out.push(cols.iter().map(|c| c.1.clone()).chain(r).collect());
    }
    out
}

fn append(into: &mut Table, t: Table) {
    if into.columns.is_empty() {
        *into = t;
    } else {
        into.rows.extend(t.rows);
    }
}

fn distance(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.loaded.cfg;
    let pairs = ctx.loaded.pairs()?;
    let tokens = rated_tokens(ctx)?;
    let base = baseline_tokens(ctx)?;
    let selection = read_selection(ctx)?;
    let mut dist = Table::default();
    let mut proj = Table::default();
    for (rep, _) in ctx.representations() {
        let store = ctx.open_rep(&rep)?;
        for seg in ctx.segments() {
            // the logistic-regression probe's best layer, else the first probe run
            let cell: Vec<&Selection> = selection
                .iter()
                .filter(|s| &s.segment == seg && s.representation == rep)
                .collect();
            let layer = cell
                .iter()
                .find(|s| s.probe == ProbeKind::LogReg.as_str())
                .or(cell.first())
                .map(|s| s.layer)
                .ok_or_else(|| CliError::config(format!("no probe result for {rep} {seg}")))?;
            let pair = pairs
                .for_target(seg)
                .ok_or_else(|| CliError::config(format!("no pair for {seg}")))?;
            let bank = |variety: Variety,
                        phone: &str|
             -> Result<(Vec<PhoneToken>, BaselineBank), CliError> {
                let toks: Vec<PhoneToken> = base
                    .iter()
                    .filter(|(t, v)| *v == variety && t.phone == phone)
                    .map(|(t, _)| t.clone())
                    .collect();
                if toks.is_empty() {
                    return Err(CliError::config(format!(
                        "no {variety} baseline tokens of {phone}"
                    )));
                }
                let m = segment_matrix(&store, &toks, layer)?;
                Ok((toks, BaselineBank::new(variety, phone, m)?))
            };
            let (ae_toks, ae) = bank(Variety::Ae, &pair.native)?;
            let (ie_toks, ie) = bank(Variety::Ie, &pair.nonnative)?;
            let (_, toks) = segment_tokens(&tokens, seg);
            let v = segment_matrix(&store, &toks, layer)?;
            let recs = compute_distances(&toks, &v, &ae, &ie, cfg.bank_cap(), cfg.seed)?;
            let key = [
                ("representation", rep.clone()),
                ("segment", seg.clone()),
                ("layer", layer.to_string()),
            ];
            append(&mut dist, prefixed(distance_table(&recs), &key));
            if cfg.regression.projection {
                let stacked =
                    DMatrix::from_fn(v.nrows() + ae.len() + ie.len(), v.ncols(), |i, j| {
                        if i < v.nrows() {
                            v[(i, j)]
                        } else if i < v.nrows() + ae.len() {
                            ae.vectors[(i - v.nrows(), j)]
                        } else {
                            ie.vectors[(i - v.nrows() - ae.len(), j)]
                        }
                    });
                let coords = project_2d(&stacked)?;
                let mut t = Table::new(&["group", "utterance_id", "phone", "accent", "pc1", "pc2"]);
                let groups = [("rated", &toks), ("AE", &ae_toks), ("IE", &ie_toks)];
                let mut row = 0;
                for (g, ts) in groups {
                    for tok in ts.iter() {
                        let accent = if g == "rated" {
                            tok.accent.to_string()
                        } else {
                            "-".into()
                        };
                        t.push(vec![
                            g.into(),
                            tok.utterance_id.clone(),
                            tok.phone.clone(),
                            accent,
                            fmt_f(coords[(row, 0)], 6),
                            fmt_f(coords[(row, 1)], 6),
                        ]);
                        row += 1;
                    }
                }
                append(&mut proj, prefixed(t, &key));
            }
        }
    }
    ctx.write_table(Stage::Distance, DISTANCES, &dist)?;
    if cfg.regression.projection {
        ctx.write_table(Stage::Distance, "projection.tsv", &proj)?;
    }
    Ok(())
}

fn regress(ctx: &Ctx) -> Result<(), CliError> {
    let spec = ctx.loaded.cfg.regression();
    let t = ctx.read_table(Stage::Distance, DISTANCES)?;
    let (rc, sc) = (t.require("representation")?, t.require("segment")?);
    let mut order: Vec<(String, String)> = Vec::new();
    let mut rows: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in t.rows.iter().enumerate() {
        let key = (r[rc].clone(), r[sc].clone());
        if !rows.contains_key(&key) {
            order.push(key.clone());
        }
        rows.entry(key).or_default().push(i);
    }
    let mut runs = Vec::new();
    for key in order {
        let recs = records_from_table(&t, &rows[&key])?;
        let result = fit_multinomial(&recs, &spec)
            .map_err(|e| CliError::from(e).context(format!("{} {}", key.0, key.1)))?;
        runs.push(RegressionRun {
            segment: key.1,
            representation: key.0,
            result,
        });
    }
    ctx.write_table(Stage::Regress, "log_odds.tsv", &regression_table(&runs))?;
    ctx.write_table(
        Stage::Regress,
        "coefficients.tsv",
        &coefficient_table(&runs),
    )
}

// ---- report ----

fn report(ctx: &Ctx) -> Result<(), CliError> {
    let sources = [
        (Stage::Ingest, "distribution.tsv"),
        (Stage::Probe, "best_layers.tsv"),
        (Stage::Probe, "layer_scores.tsv"),
        (Stage::Regress, "log_odds.tsv"),
        (Stage::PhonetTrain, "feature_scores.tsv"),
        (Stage::Svcca, "relative_weights.tsv"),
        (Stage::Svcca, "correlations.tsv"),
    ];
    for ((stage, src), dst) in sources.into_iter().zip(REPORT_FILES) {
        let t = ctx.read_table(stage, src)?;
        ctx.write_table(Stage::Report, dst, &t)?;
    }
    Ok(())
}
