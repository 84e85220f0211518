mod common;

use std::path::Path;
use std::process::{Command, Output};

fn avcoop(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avcoop")).args(args).current_dir(dir).output().unwrap()
}

fn ok(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap_or(serde_json::Value::Null)
}

#[test]
fn train_eval_analyze_and_drop() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), serde_json::to_string(&common::tiny_config()).unwrap()).unwrap();

    let summary = ok(&avcoop(&["train", "--config", "cfg.json", "--seed", "3", "--steps", "20"], d));
    assert!(summary["final_loss"].is_number());
    let run = d.join("runs/seed3");
    assert!(run.join("report.json").is_file());

    let r = ok(&avcoop(&["eval", "--checkpoint", "runs/seed3/checkpoint.json", "--suite", "runs/seed3/eval_suite.jsonl", "--trace", "t.jsonl"], d));
    assert!(r["families"]["temporal"].is_object());

    let a = ok(&avcoop(&["analyze", "t.jsonl", "runs/seed3/trace.jsonl", "--aggregation", "layer-mean", "--out", "router"], d));
    assert!(a["gap"].is_number());
    assert!(d.join("router/router.svg").is_file());

    let h = ok(&avcoop(&["drop", "--checkpoint", "runs/seed3/checkpoint.json", "--suite", "runs/seed3/eval_suite.jsonl", "--out", "drop.csv"], d));
    assert_eq!(h["verdicts"].as_array().unwrap().len(), 4);
    assert!(std::fs::read_to_string(d.join("drop.csv")).unwrap().starts_with("dropped,"));
}

#[test]
fn gen_writes_one_family() {
    let dir = tempfile::tempdir().unwrap();
    let o = avcoop(&["gen", "--family", "spatial", "--count", "5", "--out", "s.jsonl"], dir.path());
    assert!(o.status.success());
    let suite = avcoop_harness::data::read_suite(std::fs::read(dir.path().join("s.jsonl")).unwrap().as_slice()).unwrap();
    assert_eq!(suite.len(), 5);
    assert!(suite.iter().all(|s| s.family == avcoop_harness::data::Family::Spatial));
}

#[test]
fn failures_print_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"steps": 0}"#).unwrap();
    for (args, kind) in [
        (&["train", "--config", "bad.json"][..], "config"),
        (&["gen", "--family", "music", "--out", "x.jsonl"][..], "config"),
        (&["eval", "--checkpoint", "nope.json", "--suite", "nope.jsonl"][..], "io"),
    ] {
        let o = avcoop(args, dir.path());
        assert!(!o.status.success());
        let e: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
        assert_eq!(e["error"], kind, "{args:?}");
    }
}

#[test]
fn gradcheck_command_reports_classes() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(&avcoop(&["gradcheck", "--seeds", "1", "--max-entries", "2"], dir.path()));
    assert_eq!(r["passed"], true);
    assert!(r["classes"]["router"].is_object());
}
