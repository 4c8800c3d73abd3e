use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coinmark"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run coinmark")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["forge", "--out", "ds", "--parents", "2", "--images-per-leaf", "6"]);
    ok(
        dir.path(),
        &["train", "--manifest", "ds/manifest.jsonl", "--out", "m.ckpt", "--epochs", "2", "--holdout-folds", "0"],
    );
    dir
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["discover", "--out", "x"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = fixture();
    let out = run(dir.path(), &["eval", "--manifest", "ds/manifest.jsonl", "--k", "50", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fewer than k"));

    let out = run(dir.path(), &["train", "--manifest", "missing.jsonl", "--out", "m2.ckpt"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(
        dir.path(),
        &["discover", "--checkpoint", "m.ckpt", "--manifest", "ds/manifest.jsonl", "--class", "nope", "--out", "d"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn vacuous_epsilon_warns() {
    let dir = fixture();
    let args = [
        "discover", "--checkpoint", "m.ckpt", "--image", "ds/images/00000_rev.pgm", "--out", "d", "--epsilon",
    ];
    let mut with_one = args.to_vec();
    with_one.push("1.0");
    let out = run(dir.path(), &with_one);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no constraint"));

    let mut with_half = args.to_vec();
    with_half.push("0.5");
    let out = run(dir.path(), &with_half);
    assert!(out.status.success());
    assert!(out.stderr.is_empty());
    for f in ["00000_rev_mask.pgm", "00000_rev_masked.pgm", "00000_rev_discovery.json", "summary.json"] {
        assert!(dir.path().join("d").join(f).exists(), "{f}");
    }
}

#[test]
fn compare_prints_one_row_per_epsilon() {
    let dir = fixture();
    let stdout = ok(
        dir.path(),
        &["compare", "--checkpoint", "m.ckpt", "--manifest", "ds/manifest.jsonl", "--limit", "2", "--report", "c.json"],
    );
    let rows = stdout.lines().filter(|l| l.trim_start().starts_with("0.") || l.trim_start().starts_with("1.")).count();
    assert_eq!(rows, 5, "{stdout}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 5);
    assert_eq!(report["runs"].as_array().unwrap().len(), 10);
}

#[test]
fn baselines_report_evaluation_counts() {
    let dir = fixture();
    let stdout = ok(
        dir.path(),
        &["occlude", "--checkpoint", "m.ckpt", "--image", "ds/images/00001_rev.pgm", "--out", "o"],
    );
    assert!(stdout.contains("122 model evaluations"), "{stdout}");
    ok(dir.path(), &["saliency", "--checkpoint", "m.ckpt", "--image", "ds/images/00001_rev.pgm", "--out", "o"]);
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("o/00001_rev_saliency.json")).unwrap()).unwrap();
    assert_eq!(meta["model_evaluations"], 1);
}

#[test]
fn config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["forge", "--out", "ds", "--parents", "1", "--images-per-leaf", "2", "--seed", "9"]);
    let line = stdout.lines().next().unwrap();
    let json: serde_json::Value = serde_json::from_str(line.strip_prefix("forge config: ").unwrap()).unwrap();
    assert_eq!(json["seed"], 9);
    assert!(dir.path().join("ds/tree.json").exists());
}
