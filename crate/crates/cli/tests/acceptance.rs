//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary (`cargo test -p segprobe --test acceptance`) and exits non-zero if
//! any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use segprobe_cli::stages::REPORT_FILES;
use segprobe_core::corpus::AccentLabel;
use segprobe_core::distregress::{
    compute_distances, design_matrix, fit_multinomial, gradient, log_likelihood, RegressionSpec,
    DEFAULT_BANK_CAP,
};
use segprobe_core::phonfeat::{
    evaluate_features, FeatureMapping, FeatureModel, FeatureModelConfig, PairTable,
};
use segprobe_core::probe::{
    cv_select, fit_probe, lambda_max, select_features, weighted_f1, ProbeConfig, ProbeKind,
    SolverOptions, Standardizer,
};
use segprobe_core::svcca::{analyze, svcca_corr, BaselineMode, CcaConfig, CcaInput};
use segprobe_core::synth;

#[path = "../../core/tests/common/mod.rs"]
mod oracles;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, t0: Instant) -> Result<f64, String> {
    let s = t0.elapsed().as_secs_f64();
    if t0.elapsed() <= limit {
        Ok(s)
    } else {
        Err(format!("took {s:.1} s, limit {} s", limit.as_secs()))
    }
}

fn svcca_oracle() -> Verdict {
    let t0 = Instant::now();
    let cfg = CcaConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut r = synth::rng(1000 + seed);
        let d = r.random_range(5..=20);
        let x = synth::gaussian_matrix(&mut r, 200, d) * synth::gaussian_matrix(&mut r, d, d);
        let w = synth::gaussian_matrix(&mut r, d, 1);
        let y: Vec<f64> = (0..200)
            .map(|i| (x.row(i) * &w)[0] + 2.0 * synth::normal(&mut r))
            .collect();
        let rho = svcca_corr(&x, &y, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((rho * rho - oracles::oracle_r2(&x, &y, cfg.variance_kept)).abs());
    }
    let secs = within(Duration::from_secs(10), t0)?;
    check(
        worst <= 1e-8,
        format!("max |rho^2 - R^2| = {worst:.2e} over 100 instances, tol 1e-8, {secs:.2} s"),
    )
}

fn l1_kkt() -> Verdict {
    let t0 = Instant::now();
    let opts = SolverOptions::default();
    let mut worst = 0.0f64;
    let mut nonempty = 0;
    for kind in ProbeKind::ALL {
        for seed in 0..50 {
            let (x, y) = oracles::random_problem(2000 + seed);
            let lmax = lambda_max(kind, &x, &y).map_err(|e| e.to_string())?;
            let lambda = lmax * [0.5, 0.1, 0.02][seed as usize % 3];
            let m = fit_probe(kind, &x, &y, lambda, &opts, None).map_err(|e| e.to_string())?;
            let yi: Vec<usize> = y
                .iter()
                .map(|l| m.classes.binary_search(l).unwrap())
                .collect();
            worst = worst.max(oracles::oracle_kkt(kind, &x, &yi, &m));
            for l in [lmax, 2.0 * lmax] {
                let m = fit_probe(kind, &x, &y, l, &opts, None).map_err(|e| e.to_string())?;
                if m.w.iter().any(|&v| v != 0.0) {
                    nonempty += 1;
                }
            }
        }
    }
    let secs = within(Duration::from_secs(60), t0)?;
    check(
        worst <= 1e-6 && nonempty == 0,
        format!(
            "max KKT violation {worst:.2e} (tol 1e-6) on 50 instances per probe; {nonempty} non-empty supports at lambda >= lambda_max; {secs:.2} s"
        ),
    )
}

fn planted_support() -> Verdict {
    let truth: BTreeSet<usize> = (0..3).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for kind in ProbeKind::ALL {
        let cfg = ProbeConfig {
            kind,
            ..ProbeConfig::default()
        };
        let mut hits = 0;
        for seed in 0..20 {
            let (x, y) = synth::planted_support(3000 + seed, 300, 50, 3, synth::PLANTED_SNR);
            let cv = cv_select(&x, &y, &cfg).map_err(|e| e.to_string())?;
            let s = Standardizer::fit(&x);
            let m = fit_probe(
                kind,
                &s.transform(&x),
                &y,
                cv.best_lambda,
                &cfg.solver,
                None,
            )
            .map_err(|e| e.to_string())?;
            let sel = select_features(&m, 0.0);
            if !sel.is_empty() && sel.is_subset(&truth) {
                hits += 1;
            }
        }
        ok &= hits >= 18;
        lines.push(format!("{kind} {hits}/20"));
    }
    check(
        ok,
        format!(
            "support within the 3 informative of 50 features: {} (need >= 90%), SNR {}",
            lines.join(", "),
            synth::PLANTED_SNR
        ),
    )
}

fn multinomial_recovery() -> Verdict {
    let beta = synth::recovery_beta();
    let spec = RegressionSpec::default();
    let mut ok = 0;
    for seed in 0..100 {
        let recs = synth::multinomial_records(4000 + seed, 5000, &beta);
        let res = fit_multinomial(&recs, &spec).map_err(|e| e.to_string())?;
        let f = &res.fit;
        if (0..2)
            .all(|r| (1..9).all(|c| (f.coef[(r, c)] - beta[(r, c)]).abs() <= 3.0 * f.se[(r, c)]))
        {
            ok += 1;
        }
    }

    let recs = synth::multinomial_records(4200, 400, &beta);
    let x = design_matrix(&recs, &spec);
    let y: Vec<usize> = recs.iter().map(|r| r.accent().index()).collect();
    let mut r = synth::rng(4201);
    let b = synth::gaussian_matrix(&mut r, 2, 9) * 0.5;
    let g = gradient(&x, &y, &b);
    let h = 1e-5;
    let mut fd_worst = 0.0f64;
    for c in 0..2 {
        for j in 0..9 {
            let mut p = b.clone();
            p[(c, j)] += h;
            let mut q = b.clone();
            q[(c, j)] -= h;
            let fd = (log_likelihood(&x, &y, &p) - log_likelihood(&x, &y, &q)) / (2.0 * h);
            fd_worst = fd_worst.max((fd - g[(c, j)]).abs() / g[(c, j)].abs().max(1.0));
        }
    }

    let recs = synth::multinomial_records(4300, 5000, &beta);
    let fit = fit_multinomial(&recs, &spec).map_err(|e| e.to_string())?;
    let probs = fit.fit.probabilities(&design_matrix(&recs, &spec));
    let sum_worst = probs
        .row_iter()
        .map(|row| (row.sum() - 1.0).abs())
        .fold(0.0, f64::max);

    check(
        ok >= 95 && fd_worst <= 1e-6 && sum_worst <= 1e-12,
        format!(
            "{ok}/100 seeds with all 16 coefficients within 3 SE (need 95); gradient vs finite differences {fd_worst:.2e} relative (tol 1e-6); max |sum p - 1| = {sum_worst:.1e} (tol 1e-12)"
        ),
    )
}

fn sign_pattern() -> Verdict {
    let t0 = Instant::now();
    let mut worst_p = 0.0f64;
    let mut signs_ok = true;
    for seed in 0..5 {
        let (tokens, v, ae, ie) = synth::sign_pattern_corpus(5000 + seed, 900, 8);
        let recs = compute_distances(&tokens, &v, &ae, &ie, Some(DEFAULT_BANK_CAP), seed)
            .map_err(|e| e.to_string())?;
        let res = fit_multinomial(&recs, &RegressionSpec::default()).map_err(|e| e.to_string())?;
        for l in [AccentLabel::Mild, AccentLabel::Strong] {
            let (ba, _, _, pa) = res.get(l, "d_AE").ok_or("missing d_AE")?;
            let (bi, _, _, pi) = res.get(l, "d_IE").ok_or("missing d_IE")?;
            signs_ok &= ba > 0.0 && bi < 0.0;
            worst_p = worst_p.max(pa).max(pi);
        }
    }
    let secs = within(Duration::from_secs(30), t0)?;
    check(
        signs_ok && worst_p < 0.01,
        format!(
            "beta(d_AE) > 0 and beta(d_IE) < 0 for Mild and Strong: {signs_ok}; largest p {worst_p:.1e} (need < .01); 5 corpora, {secs:.2} s"
        ),
    )
}

fn relative_weights() -> Verdict {
    let cfg = CcaConfig::default();
    let mut good = 0;
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for seed in 0..20 {
        let s = synth::weight_setup(6000 + seed, 300, 8, 3);
        let input = CcaInput {
            segment: "t",
            representation: "syn",
            probe: "logreg",
            tokens: &s.tokens,
            full: &s.full,
            selected: &s.selected,
            profiles: &s.profiles,
            features: &s.features,
        };
        let (_, weights) =
            analyze(&input, BaselineMode::Pooled, &cfg).map_err(|e| e.to_string())?;
        let mut seed_ok = !weights.is_empty();
        for w in &weights {
            let designated = s.designated.contains(&w.feature);
            seed_ok &= designated == (w.ratio > 1.0);
            if designated {
                lo = lo.min(w.ratio);
            } else {
                hi = hi.max(w.ratio);
            }
        }
        good += seed_ok as usize;
    }
    check(
        good == 20,
        format!("{good}/20 seeds with designated > 1 and others < 1; min designated {lo:.4}, max other {hi:.4}"),
    )
}

fn f1_oracle() -> Verdict {
    let a = weighted_f1(&["a", "a", "b"], &["a", "b", "b"]);
    let p = weighted_f1(&["a", "b", "c", "a"], &["a", "b", "c", "a"]);
    check(
        (a - 66.67).abs() <= 0.01 && p == 100.0,
        format!("[a,a,b]/[a,b,b] = {a:.4} (66.67 +- 0.01); perfect = {p}"),
    )
}

fn mapping_fidelity() -> Verdict {
    let res = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/resources");
    let mapping =
        FeatureMapping::load(&res.join("feature_mapping.tsv")).map_err(|e| e.to_string())?;
    let pairs = PairTable::load(&res.join("segment_pairs.tsv")).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    let set = |v: &[&str]| {
        v.iter()
            .map(|s| s.to_string())
            .collect::<BTreeSet<String>>()
    };
    for p in &pairs.pairs {
        let diff = mapping
            .differing_features(&p.native, &p.nonnative)
            .ok_or(format!("{} or {} unmapped", p.native, p.nonnative))?;
        if set(&diff) != p.contrastive.iter().cloned().collect() {
            problems.push(format!(
                "[{}]-[{}] differ on {diff:?}",
                p.native, p.nonnative
            ));
        }
    }
    for (a, b, want) in [
        ("t", "ʈ", vec!["anterior"]),
        ("v", "ʋ", vec!["approximant", "consonantal", "sonorant"]),
        (
            "ɹ",
            "ɾ",
            vec!["anterior", "consonantal", "tap", "distributed"],
        ),
    ] {
        let got = mapping.differing_features(a, b).unwrap_or_default();
        if set(&got) != set(&want) {
            problems.push(format!("[{a}]-[{b}]: {got:?}, want {want:?}"));
        }
    }
    check(
        problems.is_empty() && pairs.pairs.len() == 3,
        if problems.is_empty() {
            format!(
                "{} pairs checked against the resource files",
                pairs.pairs.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn run_bin(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_segprobe"))
        .args(args)
        .current_dir(dir)
        .env("SEGPROBE_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "segprobe {args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn determinism() -> Verdict {
    let t0 = Instant::now();
    let mut outputs = Vec::new();
    let dirs: Vec<_> = (0..2)
        .map(|_| tempfile::tempdir().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    for d in &dirs {
        run_bin(d.path(), &["fixture", "."])?;
        run_bin(d.path(), &["pipeline"])?;
        let files: Vec<Vec<u8>> = REPORT_FILES
            .iter()
            .map(|f| fs::read(d.path().join("out/report").join(f)).map_err(|e| format!("{f}: {e}")))
            .collect::<Result<_, _>>()?;
        outputs.push(files);
    }
    let differing: Vec<&str> = REPORT_FILES
        .iter()
        .zip(outputs[0].iter().zip(&outputs[1]))
        .filter(|(_, (a, b))| a != b)
        .map(|(f, _)| *f)
        .collect();
    check(
        differing.is_empty(),
        format!(
            "{} report files from two independent fixture runs; differing: {differing:?}; {:.1} s",
            REPORT_FILES.len(),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn phonet_sanity() -> Verdict {
    let cfg = FeatureModelConfig {
        hidden: 64,
        context: 0,
        learning_rate: 1e-2,
        max_epochs: 30,
        ..FeatureModelConfig::default()
    };
    let (model, _) = FeatureModel::train(&synth::separable_frames(12, 100, 7001), &cfg)
        .map_err(|e| e.to_string())?;
    let scores = evaluate_features(&model, &synth::separable_frames(4, 100, 7002))
        .map_err(|e| e.to_string())?;
    let worst = scores.iter().map(|s| s.f1).fold(f64::MAX, f64::min);
    check(
        worst > 99.0,
        format!(
            "min per-feature F1 {worst:.2} over {} features (need > 99); real-data accuracy range 86.69-99.99 is reference only",
            scores.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("svcca oracle equivalence", svcca_oracle),
        ("L1 KKT and empty support at lambda_max", l1_kkt),
        ("planted-support recovery", planted_support),
        ("multinomial recovery", multinomial_recovery),
        ("distance sign pattern", sign_pattern),
        ("relative-weight prominence", relative_weights),
        ("weighted F1 hand oracle", f1_oracle),
        ("feature mapping fidelity", mapping_fidelity),
        ("pipeline determinism", determinism),
        ("phonet-lite on separable frames", phonet_sanity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
