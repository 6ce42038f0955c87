use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dapt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dapt"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dapt(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const C: &str = "--config=pipeline.toml";

/// fixture -> ingest -> keywords -> index -> retrieve -> pretrain -> sft -> eval
fn run_pipeline(dir: &Path) {
    ok(dir, &["fixture", "--out-dir", "."]);
    ok(dir, &[C, "ingest"]);
    ok(dir, &[C, "keywords"]);
    ok(dir, &[C, "index"]);
    ok(dir, &[C, "retrieve", "--budget-tokens", "11000"]);
    ok(dir, &[C, "pretrain", "--vocab-store", "general.store", "--max-steps", "4", "--history", "pretrain.tsv"]);
    ok(dir, &[C, "sft", "--max-steps", "3", "--history", "sft.tsv"]);
    let summary = ok(dir, &[C, "eval", "--max-new-tokens", "4"]);
    assert!(summary.starts_with("accuracy="), "{summary}");
}

const OUTPUTS: &[&str] = &[
    "general.store",
    "keywords.tsv",
    "general.idx",
    "selected.store",
    "pretrained.ckpt",
    "finetuned.ckpt",
    "pretrain.tsv",
    "sft.tsv",
    "report.tsv",
];

#[test]
fn full_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    for name in OUTPUTS {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty(), "{name} empty");
        assert!(x == y, "{name} differs between identical runs");
    }
    let hist = fs::read_to_string(a.path().join("pretrain.tsv")).unwrap();
    assert_eq!(hist.lines().count(), 4);
    assert!(hist.lines().all(|l| l.split('\t').nth(1) == Some("pretrain")));
    let report = fs::read_to_string(a.path().join("report.tsv")).unwrap();
    assert!(report.lines().last().unwrap().starts_with("accuracy="));
}

#[test]
fn subcommands_leave_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["fixture", "--out-dir", "."]);
    ok(d, &[C, "ingest"]);
    ok(d, &[C, "keywords"]);
    ok(d, &[C, "index"]);
    let inputs = ["corpus.jsonl", "general.store", "general.idx", "keywords.tsv", "samples.txt", "lexicon.txt"];
    let before: Vec<Vec<u8>> = inputs.iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    ok(d, &[C, "ingest", "--store", "again.store"]);
    ok(d, &[C, "index", "--out", "again.idx"]);
    ok(d, &[C, "retrieve", "--budget-tokens", "5000"]);
    let after: Vec<Vec<u8>> = inputs.iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(fs::read(d.join("again.store")).unwrap(), before[1]);
    assert_eq!(fs::read(d.join("again.idx")).unwrap(), before[2]);
}

#[test]
fn scripted_gold_responses_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["fixture", "--out-dir", "."]);
    let out = ok(d, &[C, "eval", "--responses", "gold_responses.jsonl", "--report", "gold.tsv"]);
    assert_eq!(out.trim(), "accuracy=1.000000 n=24 abstain=0");
    assert!(fs::read_to_string(d.join("gold.tsv")).unwrap().ends_with("accuracy=1.000000 n=24 abstain=0\n"));
}

#[test]
fn zero_score_query_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["fixture", "--out-dir", "."]);
    ok(d, &[C, "ingest"]);
    ok(d, &[C, "index"]);
    fs::write(d.join("none.tsv"), "qqq\t1\t1\tlexicon\n").unwrap();
    let out = dapt(d, &[C, "retrieve", "--keywords", "none.tsv", "--budget-tokens", "100"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["status"], "error");
    assert_eq!(v["kind"], "NoPositiveScore");
    assert!(v["message"].as_str().unwrap().contains("no positive-score documents"));
    assert!(!d.join("selected.store").exists());
}

#[test]
fn config_and_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[retrieval]\nk3 = 1\n").unwrap();
    let out = dapt(d, &["--config", "bad.toml", "gradcheck"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("k3"));

    let out = dapt(d, &["ingest", "--input", "missing.jsonl", "--store", "x.store"]);
    assert!(!out.status.success());
    let line = String::from_utf8(out.stderr).unwrap();
    assert_eq!(line.lines().count(), 1);
    assert!(line.contains("\"kind\":\"Io\""), "{line}");

    fs::write(d.join("corrupt.ckpt"), b"DFCKPT1 not really").unwrap();
    let out = dapt(d, &["eval", "--checkpoint", "corrupt.ckpt", "--exam", "missing.jsonl"]);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--report", "grad.tsv"]);
    assert!(out.lines().last().unwrap().ends_with("passed=true"), "{out}");
    let v = ok(dir.path(), &["--version"]);
    assert!(v.contains("checkpoint DFCKPT 1") && v.contains("index DFIDX 1") && v.contains("corpus-store DFSTORE 1"));
}
