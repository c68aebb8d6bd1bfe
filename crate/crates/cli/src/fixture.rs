//! Synthetic fixture corpus: alignments, ratings, audio and a three-layer
//! SEGREP1 representation in which target segments drift from the native
//! toward the non-native member as the accent label gets stronger.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use segprobe_core::corpus::{
    write_textgrid, AccentLabel, AlignmentConfig, Interval, Position, UtteranceAlignment,
};
use segprobe_core::mfcc::write_wav;
use segprobe_core::repstore::{write_segrep, RepManifest};
use segprobe_core::synth::{normal, rng};

use crate::error::CliError;

pub const FIXTURE_SEED: u64 = 20240917;
pub const SAMPLE_RATE: u32 = 8000;
const N_RATED: usize = 90;
const N_BASELINE: usize = 8;
const HOP: f64 = 0.02;
const DIM: usize = 12;
/// How strongly each layer expresses the accent continuum.
const LAYER_WEIGHT: [f64; 3] = [0.3, 1.0, 0.6];
const FRAME_NOISE: f64 = 0.6;
const TOKEN_SPREAD: f64 = 0.8;

pub const CONFIG: &str = r#"# Fixture run: see README for the schema.
seed = 7
output_dir = "out"
segments = ["ʋ", "ɾ", "ʈ"]

[paths]
textgrids = "textgrids"
ratings = "ratings.tsv"
baseline_list = "baseline.tsv"
audio = "audio"

[representations]
ssl = "segrep/ssl"

[mfcc]
sample_rate = 8000
n_fft = 256
n_mels = 26

[phonet]
hidden = 32
context = 2
max_epochs = 15
batch_size = 128

[probe]
n_lambdas = 10
min_ratio = 0.01
"#;

/// (native, non-native) pairs in target order.
const PAIRS: [(&str, &str); 3] = [("v", "ʋ"), ("ɹ", "ɾ"), ("t", "ʈ")];
const VOWELS: [&str; 2] = ["a", "i"];
const CONSONANTS: [&str; 4] = ["n", "s", "m", "k"];

/// Tone frequencies and noise share used to synthesize a phone.
#[derive(Clone, Copy)]
struct Voice {
    f1: f64,
    f2: f64,
    noise: f64,
}

fn voice(phone: &str) -> Voice {
    let (f1, f2, noise) = match phone {
        "a" => (700.0, 1200.0, 0.0),
        "i" => (300.0, 2300.0, 0.0),
        "n" => (250.0, 1500.0, 0.05),
        "m" => (250.0, 1000.0, 0.05),
        "s" => (3000.0, 3500.0, 0.9),
        "k" => (1800.0, 2500.0, 0.6),
        "v" => (200.0, 1400.0, 0.5),
        "ʋ" => (380.0, 1700.0, 0.1),
        "ɹ" => (450.0, 1300.0, 0.05),
        "ɾ" => (300.0, 1900.0, 0.3),
        "t" => (3200.0, 3600.0, 0.7),
        "ʈ" => (1900.0, 2600.0, 0.7),
        _ => (0.0, 0.0, 0.02),
    };
    Voice { f1, f2, noise }
}

fn blend(a: Voice, b: Voice, t: f64) -> Voice {
    Voice {
        f1: a.f1 + t * (b.f1 - a.f1),
        f2: a.f2 + t * (b.f2 - a.f2),
        noise: a.noise + t * (b.noise - a.noise),
    }
}

/// One aligned phone; `target` holds the pair index and the position on
/// the native to non-native continuum.
struct Phone {
    label: String,
    start: f64,
    end: f64,
    target: Option<(usize, f64)>,
    /// Token-level nuisance: formant scale and a representation offset.
    jitter: (f64, Vec<f64>),
}

struct Utt {
    id: String,
    phones: Vec<Phone>,
    words: Vec<Interval>,
    duration: f64,
}

fn build_utterance(
    r: &mut ChaCha8Rng,
    id: String,
    continuum: &mut dyn FnMut(&mut ChaCha8Rng) -> f64,
    native: bool,
) -> Utt {
    let mut order = [0usize, 1, 2];
    for i in (1..3).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    let mut phones = vec![];
    let mut words = vec![];
    let mut t = 0.1;
    phones.push(Phone {
        label: String::new(),
        start: 0.0,
        end: t,
        target: None,
        jitter: (1.0, vec![0.0; DIM]),
    });
    words.push(Interval::new("", 0.0, t));
    for &p in &order {
        let position = Position::ALL[r.random_range(0..3)];
        let (nat, non) = PAIRS[p];
        let label = if native { nat } else { non };
        let v = VOWELS[r.random_range(0..2)];
        let c = CONSONANTS[r.random_range(0..4)];
        let shape: Vec<&str> = match position {
            Position::Initial => vec![label, v, c],
            Position::Medial => vec![v, label, v],
            Position::Final => vec![c, v, label],
        };
        let w_start = t;
        let mut word = String::new();
        for ph in shape {
            let is_target = ph == label;
            let dur = if is_target {
                r.random_range(0.07..0.10)
            } else if VOWELS.contains(&ph) {
                r.random_range(0.08..0.12)
            } else {
                r.random_range(0.06..0.08)
            };
            let end = t + dur;
            let target = is_target.then(|| (p, continuum(r)));
            let jitter = if is_target {
                (
                    r.random_range(0.85..1.15),
                    (0..DIM).map(|_| TOKEN_SPREAD * normal(r)).collect(),
                )
            } else {
                (1.0, vec![0.0; DIM])
            };
            phones.push(Phone {
                label: ph.into(),
                start: t,
                end,
                target,
                jitter,
            });
            word.push_str(ph);
            t = end;
        }
        words.push(Interval::new(word, w_start, t));
    }
    let end = t + 0.1;
    phones.push(Phone {
        label: String::new(),
        start: t,
        end,
        target: None,
        jitter: (1.0, vec![0.0; DIM]),
    });
    words.push(Interval::new("", t, end));
    Utt {
        id,
        phones,
        words,
        duration: end,
    }
}

fn phone_voice(p: &Phone) -> Voice {
    let v = match p.target {
        Some((k, c)) => blend(voice(PAIRS[k].0), voice(PAIRS[k].1), c),
        None => voice(&p.label),
    };
    Voice {
        f1: v.f1 * p.jitter.0,
        f2: v.f2 * p.jitter.0,
        ..v
    }
}

fn synthesize(r: &mut ChaCha8Rng, u: &Utt) -> Vec<f64> {
    let n = (u.duration * SAMPLE_RATE as f64).round() as usize;
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let t = i as f64 / SAMPLE_RATE as f64;
        while k + 1 < u.phones.len() && t >= u.phones[k].end {
            k += 1;
        }
        let p = &u.phones[k];
        let s = if p.label.is_empty() {
            0.01 * normal(r)
        } else {
            let v = phone_voice(p);
            let tone = (2.0 * PI * v.f1 * t).sin() + 0.5 * (2.0 * PI * v.f2 * t).sin();
            0.3 * ((1.0 - v.noise) * tone + v.noise * normal(r))
        };
        out.push(s.clamp(-1.0, 1.0));
    }
    out
}

/// Per-layer frame matrices: phone embeddings plus noise, target phones
/// interpolated between the pair members by the layer-weighted continuum.
fn representation(
    r: &mut ChaCha8Rng,
    u: &Utt,
    emb: &BTreeMap<String, Vec<f64>>,
) -> Vec<DMatrix<f32>> {
    let n = (u.duration / HOP).floor() as usize;
    LAYER_WEIGHT
        .iter()
        .map(|&w| {
            DMatrix::from_fn(n, DIM, |i, j| {
                let center = (i as f64 + 0.5) * HOP;
                let p = u
                    .phones
                    .iter()
                    .find(|p| p.start <= center && center < p.end)
                    .expect("phones tile the utterance");
                let base = match p.target {
                    Some((k, c)) => {
                        let (a, b) = (&emb[PAIRS[k].0], &emb[PAIRS[k].1]);
                        (1.0 - w * c) * a[j] + w * c * b[j]
                    }
                    None => emb.get(&p.label).map_or(0.0, |e| e[j]),
                };
                (base + p.jitter.1[j] + FRAME_NOISE * normal(r)) as f32
            })
        })
        .collect()
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::config(format!("{}: {e}", path.display()))
}

/// Write the fixture corpus and `segprobe.toml` into `dir`.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<(), CliError> {
    let mut r = rng(seed);
    for sub in ["textgrids", "audio", "segrep"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
    }
    let mut emb = BTreeMap::new();
    let all_phones = PAIRS
        .iter()
        .flat_map(|(a, b)| [*a, *b])
        .chain(VOWELS)
        .chain(CONSONANTS);
    for p in all_phones {
        emb.insert(
            p.to_string(),
            (0..DIM).map(|_| normal(&mut r)).collect::<Vec<f64>>(),
        );
    }

    let mut utts = Vec::new();
    let mut ratings = String::from("utterance_id\trater1\trater2\trater3\n");
    for i in 0..N_RATED {
        let accent = AccentLabel::ALL[i % 3];
        let centre: f64 = [0.3, 0.5, 0.7][accent.index()];
        let mut cont = |r: &mut ChaCha8Rng| (centre + r.random_range(-0.3f64..0.3)).clamp(0.0, 1.0);
        let id = format!("r{i:03}");
        utts.push(build_utterance(&mut r, id.clone(), &mut cont, false));
        // the lowest score decides the merged label
        let low = accent.index() as u8 + 1;
        let mut scores = [low, r.random_range(low..=4), r.random_range(low..=4)];
        scores.swap(0, r.random_range(0..3));
        ratings.push_str(&format!(
            "{id}\t{}\t{}\t{}\n",
            scores[0], scores[1], scores[2]
        ));
    }
    let mut baseline = String::from("utterance_id\tvariety\n");
    for i in 0..2 * N_BASELINE {
        let native = i < N_BASELINE;
        let id = format!("b{}{:02}", if native { "ae" } else { "ie" }, i % N_BASELINE);
        let mut cont = |r: &mut ChaCha8Rng| {
            if native {
                r.random_range(0.0..0.1)
            } else {
                r.random_range(0.9..1.0)
            }
        };
        utts.push(build_utterance(&mut r, id.clone(), &mut cont, native));
        baseline.push_str(&format!("{id}\t{}\n", if native { "AE" } else { "IE" }));
    }

    let acfg = AlignmentConfig::default();
    let mut reps = Vec::new();
    for u in &utts {
        let a = UtteranceAlignment {
            utterance_id: u.id.clone(),
            xmin: 0.0,
            xmax: u.duration,
            phone_tier: u
                .phones
                .iter()
                .map(|p| Interval::new(p.label.clone(), p.start, p.end))
                .collect(),
            word_tier: u.words.clone(),
        };
        let tg = dir.join("textgrids").join(format!("{}.TextGrid", u.id));
        fs::write(&tg, write_textgrid(&a, &acfg)).map_err(|e| io(&tg, e))?;
        write_wav(
            &dir.join("audio").join(format!("{}.wav", u.id)),
            &synthesize(&mut r, u),
            SAMPLE_RATE,
        )?;
        reps.push((u.id.clone(), representation(&mut r, u, &emb)));
    }
    let mut m = RepManifest::new("fixture-ssl", LAYER_WEIGHT.len(), DIM, HOP);
    m.layer_indexing = Some("0=first_block".into());
    let ssl = dir.join("segrep").join("ssl");
    if ssl.exists() {
        fs::remove_dir_all(&ssl).map_err(|e| io(&ssl, e))?;
    }
    write_segrep(&ssl, m, &reps)?;
    for (name, text) in [
        ("ratings.tsv", ratings.as_str()),
        ("baseline.tsv", baseline.as_str()),
        ("segprobe.toml", CONFIG),
    ] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| io(&p, e))?;
    }
    Ok(())
}
