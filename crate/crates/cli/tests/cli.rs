use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segprobe_cli::stages::REPORT_FILES;
use tempfile::TempDir;

fn segprobe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segprobe"))
        .args(args)
        .current_dir(dir)
        .env("SEGPROBE_LOG", "error")
        .output()
        .expect("binary runs")
}

fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = segprobe(dir.path(), &["fixture", "."]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn reports(dir: &Path) -> Vec<Vec<u8>> {
    REPORT_FILES
        .iter()
        .map(|f| fs::read(dir.join("out/report").join(f)).unwrap())
        .collect()
}

#[test]
fn pipeline_runs_skips_and_reproduces() {
    let fx = fixture();
    let dir = fx.path();
    let out = segprobe(dir, &["pipeline"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let first = reports(dir);
    for (name, bytes) in REPORT_FILES.iter().zip(&first) {
        let text = String::from_utf8(bytes.clone()).unwrap();
        let mut lines = text.lines();
        assert!(
            lines.next().unwrap().starts_with("# config_hash "),
            "{name}"
        );
        assert_eq!(lines.next(), Some("# seed 7"), "{name}");
        assert!(lines.count() > 1, "{name} has no rows");
    }

    // second run is a no-op
    let out = segprobe(dir, &["pipeline"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let log = fs::read_to_string(dir.join("out/run_log.jsonl")).unwrap();
    let skipped = log
        .lines()
        .filter(|l| l.contains("\"status\":\"skipped\""))
        .count();
    assert_eq!(skipped, 9);
    assert_eq!(reports(dir), first);

    // a forced rerun recomputes everything and lands on the same bytes
    let out = segprobe(dir, &["--force", "pipeline"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(reports(dir), first);
}

#[test]
fn stage_without_upstream_exits_2() {
    let fx = fixture();
    let out = segprobe(fx.path(), &["probe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`ingest`"), "{}", stderr(&out));
}

#[test]
fn rerunning_a_stage_invalidates_later_ones() {
    let fx = fixture();
    let dir = fx.path();
    assert_eq!(
        segprobe(dir, &["pipeline", "--stage", "mfcc"])
            .status
            .code(),
        Some(0)
    );
    assert!(dir.join("out/mfcc/.complete").exists());
    assert!(!dir.join("out/phonet-train").exists());

    let out = segprobe(dir, &["--force", "ingest"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(!dir.join("out/mfcc/.complete").exists());
    let out = segprobe(dir, &["probe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`mfcc`"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_1() {
    let fx = fixture();
    let dir = fx.path();
    let cfg = fs::read_to_string(dir.join("segprobe.toml")).unwrap();

    fs::write(
        dir.join("typo.toml"),
        cfg.replace("[probe]", "[probe]\nn_lambda = 3"),
    )
    .unwrap();
    let out = segprobe(dir, &["--config", "typo.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_lambda"), "{}", stderr(&out));

    fs::write(
        dir.join("nopath.toml"),
        cfg.replace("ratings.tsv", "missing.tsv"),
    )
    .unwrap();
    let out = segprobe(dir, &["--config", "nopath.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.tsv"), "{}", stderr(&out));

    let out = segprobe(dir, &["--config", "absent.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(1));

    let out = segprobe(dir, &["--stage", "probe", "ingest"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_override_changes_the_hash() {
    let fx = fixture();
    let dir = fx.path();
    assert_eq!(segprobe(dir, &["ingest"]).status.code(), Some(0));
    let a = fs::read_to_string(dir.join("out/ingest/.complete")).unwrap();
    assert_eq!(
        segprobe(dir, &["--seed", "8", "ingest"]).status.code(),
        Some(0)
    );
    let b = fs::read_to_string(dir.join("out/ingest/.complete")).unwrap();
    assert_ne!(a, b);
    let log = fs::read_to_string(dir.join("out/run_log.jsonl")).unwrap();
    assert!(log.lines().last().unwrap().contains("\"seed\":8"));
}
