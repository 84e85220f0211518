use std::process::Command;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_avcoop-dataset"))
}

#[test]
fn parse_error_is_reported_as_json_with_failure_exit() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let out = cli().args(["parse", "--kind", "ave"]).arg(&empty).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "parse");
}

#[test]
fn run_then_export_and_import() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let mut lines = String::new();
    for i in 0..40 {
        let (kind, label) = [("ave", "Dog, [1,3]"), ("arig", "[1, 2, 3, 4]"), ("avqa", "two")][i % 3];
        lines.push_str(&serde_json::json!({ "id": format!("x{i}"), "kind": kind, "media_ref": format!("m{i}"), "original_label": label }).to_string());
        lines.push('\n');
    }
    std::fs::write(p("items.jsonl"), lines).unwrap();
    let run = |out: &str| {
        let o = cli().args(["run", "--corrupt-permille", "250", "--input"]).arg(p("items.jsonl")).arg("--out").arg(p(out)).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap()
    };
    let summary = run("a.jsonl");
    run("b.jsonl");
    assert_eq!(std::fs::read(p("a.jsonl")).unwrap(), std::fs::read(p("b.jsonl")).unwrap());
    assert_eq!(summary["total"], 40);
    let accepted = summary["accepted"].as_u64().unwrap();
    assert!(accepted < 40);

    let o = cli().arg("export-rejected").arg("--records").arg(p("a.jsonl")).arg("--out").arg(p("rej.jsonl")).output().unwrap();
    assert!(o.status.success());
    let text = std::fs::read_to_string(p("rej.jsonl")).unwrap();
    let fixed: String = text
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["corrected_response"] = format!("Answer: {}", v["original_label"].as_str().unwrap()).into();
            format!("{v}\n")
        })
        .collect();
    std::fs::write(p("fix.jsonl"), fixed).unwrap();
    let o = cli()
        .arg("import-corrections")
        .arg("--records")
        .arg(p("a.jsonl"))
        .arg("--corrections")
        .arg(p("fix.jsonl"))
        .arg("--out")
        .arg(p("c.jsonl"))
        .output()
        .unwrap();
    assert!(o.status.success());
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["accepted"], 40);
}

#[test]
fn bbox_and_grammar_commands() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("mask.txt");
    std::fs::write(&m, "0000\n0110\n0010\n").unwrap();
    let o = cli().arg("bbox").arg(&m).output().unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "[1, 1, 2, 2]");
    std::fs::write(&m, "000\n000\n").unwrap();
    let o = cli().arg("bbox").arg(&m).output().unwrap();
    assert!(!o.status.success());
    let o = cli().args(["grammar", "--kind", "arig"]).output().unwrap();
    assert!(String::from_utf8(o.stdout).unwrap().contains("x_left"));
}
