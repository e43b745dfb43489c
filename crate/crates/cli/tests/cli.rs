use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_examguard"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn svg_ok(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    roxmltree::Document::parse(&text).unwrap();
    text
}

#[test]
fn version_names_the_checkpoint_format() {
    let out = ok(&["--version"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("checkpoint format 1"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["synth", "--n", "5"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for f in [&a, &b] {
        ok(&["synth", "--n", "50", "--prior", "0.3", "--seed", "4", "--out", p(f)]);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 51);
}

#[test]
fn training_on_an_empty_file_fails_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = run(&[
        "train",
        "--data",
        p(&empty),
        "--out-model",
        p(&dir.path().join("m.ptbm")),
        "--seed",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: ") && err.contains("empty.csv"), "{err}");
    assert!(!dir.path().join("m.ptbm").exists());
}

#[test]
fn compare_writes_one_row_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    ok(&[
        "synth",
        "--n",
        "120",
        "--prior",
        "0.3",
        "--seed",
        "1",
        "--out",
        p(&d("train.csv")),
    ]);
    ok(&[
        "synth",
        "--n",
        "30",
        "--prior",
        "0.3",
        "--seed",
        "2",
        "--out",
        p(&d("t1.csv")),
    ]);
    ok(&[
        "synth",
        "--n",
        "30",
        "--prior",
        "0.3",
        "--seed",
        "3",
        "--out",
        p(&d("t2.csv")),
    ]);
    let report = d("compare.csv");
    #[rustfmt::skip]
    ok(&[
        "compare", "--train", p(&d("train.csv")), "--tests", p(&d("t1.csv")), p(&d("t2.csv")),
        "--report", p(&report), "--seed", "0", "--epochs", "1",
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,t1,t2,Overall");
    let models: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(models, ["dnn", "rnn", "lstm", "denselstm"]);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    ok(&[
        "synth",
        "--n",
        "150",
        "--prior",
        "0.3",
        "--seed",
        "7",
        "--out",
        p(&d("train.csv")),
    ]);
    ok(&[
        "synth",
        "--n",
        "40",
        "--prior",
        "0.3",
        "--seed",
        "8",
        "--out",
        p(&d("test.csv")),
    ]);

    #[rustfmt::skip]
    let out = ok(&[
        "train", "--data", p(&d("train.csv")), "--out-model", p(&d("m.ptbm")), "--seed", "0",
        "--model", "dnn", "--epochs", "3", "--lr", "0.01",
    ]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary.is_object());

    ok(&[
        "eval",
        "--model",
        p(&d("m.ptbm")),
        "--test",
        p(&d("test.csv")),
        "--report",
        p(&d("r.json")),
    ]);
    ok(&[
        "eval",
        "--model",
        p(&d("m.ptbm")),
        "--test",
        p(&d("test.csv")),
        "--report",
        p(&d("r.csv")),
    ]);
    let csv = std::fs::read_to_string(d("r.csv")).unwrap();
    assert!(csv.starts_with("testset,model,accuracy,auc\ntest,dnn,"), "{csv}");

    #[rustfmt::skip]
    ok(&[
        "simulate", "--data", p(&d("test.csv")), "--model", p(&d("m.ptbm")), "--alerts", p(&d("alerts.jsonl")),
        "--seed", "1", "--store-out", p(&d("store.json")),
    ]);
    for line in std::fs::read_to_string(d("alerts.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["trigger"] == "ip_repeat" || v["trigger"] == "behavior_suspected");
    }

    ok(&[
        "ipscan",
        "--store",
        p(&d("store.json")),
        "--out-svg",
        p(&d("ips.svg")),
        "--out-points",
        p(&d("pts.json")),
    ]);
    svg_ok(&d("ips.svg"));
    ok(&["plot", "--roc", "--in", p(&d("r.json")), "--out", p(&d("roc.svg"))]);
    assert!(svg_ok(&d("roc.svg")).contains("dnn"));
    ok(&["plot", "--pca", "--in", p(&d("pts.json")), "--out", p(&d("pca.svg"))]);
    svg_ok(&d("pca.svg"));

    ok(&["encode", "--data", p(&d("test.csv")), "--out", p(&d("features.csv"))]);
    let features = std::fs::read_to_string(d("features.csv")).unwrap();
    assert!(features.starts_with("candidate_id,q1,"));
    assert_eq!(features.lines().count(), 41);
}
