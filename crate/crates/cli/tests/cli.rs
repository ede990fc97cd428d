use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn seqcomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqcomp")).args(args).output().unwrap()
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad report ({e}): {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn schedule_verifies_small_dims() {
    let out = seqcomp(&["schedule", "--H", "1", "--d", "1", "--p", "1", "--L", "2", "--verify"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["status"], "pass");
    let checks = v["result"]["verify"]["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert_eq!(v["manifest"]["command"], "schedule");
}

#[test]
fn solvers_answer_like_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let task = dir.path().join("t.json").display().to_string();
    let out = seqcomp(&["gen-task", "--L", "3", "--m", "2", "--n", "2,2", "--seed", "11", "--out", &task]);
    assert_eq!(out.status.code(), Some(0));
    let expected = json_of(&out)["result"]["answer"].clone();
    let eval = json_of(&seqcomp(&["eval-task", &task]));
    assert_eq!(eval["result"]["answer"], expected);
    for builder in ["depth", "cot", "encoder"] {
        let out = seqcomp(&["solve", "--builder", builder, "--task", &task]);
        assert_eq!(out.status.code(), Some(0), "{builder}");
        let v = json_of(&out);
        assert_eq!(v["result"]["answer"], expected, "{builder}");
        assert_eq!(v["result"]["correct"], true);
        assert!(v["result"]["report"]["margin"].is_object());
    }
    let digest = &json_of(&seqcomp(&["eval-task", &task]))["manifest"]["inputs"][&task];
    assert_eq!(digest.as_str().unwrap().len(), 64);
}

#[test]
fn emitted_spec_runs_to_the_same_answer() {
    let dir = tempfile::tempdir().unwrap();
    let task = dir.path().join("t.json").display().to_string();
    let spec = dir.path().join("s.json").display().to_string();
    seqcomp(&["gen-task", "--L", "2", "--m", "3", "--n", "2", "--seed", "1", "--out", &task]);
    let solved = json_of(&seqcomp(&["solve", "--builder", "depth", "--task", &task, "--emit-spec", &spec]));
    let ran = json_of(&seqcomp(&["run", "--spec", &spec, "--prompt", &task]));
    assert_eq!(ran["result"]["answer"]["value"], solved["result"]["answer"]);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(seqcomp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(seqcomp(&["schedule", "--H", "1"]).status.code(), Some(2));
    assert_eq!(seqcomp(&["gen-task", "--L", "2", "--m", "2", "--bogus"]).status.code(), Some(2));
    // Wrong number of query sizes is a validation error.
    assert_eq!(seqcomp(&["gen-task", "--L", "3", "--m", "2", "--n", "2"]).status.code(), Some(2));
    assert_eq!(seqcomp(&["eval-task", "/nonexistent/task.json"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"formatVersion":1,"params":{"L":1,"m":2},"z0":3,"z":[[1,1]],"w":[]}"#);
    let out = seqcomp(&["eval-task", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("z0"));
    assert_eq!(seqcomp(&["--help"]).status.code(), Some(0));
}

#[test]
fn failed_checks_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // Far too little precision for the retrieval scale.
    let task = dir.path().join("t.json").display().to_string();
    seqcomp(&["gen-task", "--L", "2", "--m", "3", "--n", "2", "--out", &task]);
    let out = seqcomp(&["solve", "--builder", "depth", "--task", &task, "--int-bits", "2", "--frac-bits", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn circuits_compile_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(
        dir.path(),
        "c.json",
        r#"{"inputCount":3,"layers":[[{"inputs":[0,1,2],"table":[0,1,1,0]}]]}"#,
    );
    let spec = dir.path().join("spec.json").display().to_string();
    let rep = dir.path().join("r.json").display().to_string();
    let out = seqcomp(&["compile-circuit", "--in", &c, "--out", &spec, "--report", &rep]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(r["result"]["depth"], 6);
    assert!(Path::new(&spec).exists());
    let out = seqcomp(&["check-circuit", "--in", &c]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["result"]["mode"], "exhaustive");
    assert_eq!(v["result"]["checked"], 8);
    assert_eq!(v["result"]["mismatches"], 0);

    let broken = write(dir.path(), "b.json", r#"{"inputCount":2,"layers":[[{"inputs":[0,5],"table":[0,1,0]}]]}"#);
    assert_eq!(seqcomp(&["check-circuit", "--in", &broken]).status.code(), Some(2));
}

#[test]
fn reduction_and_fooling_reports() {
    let out = seqcomp(&["verify-reduction", "--L", "2", "--m", "2", "--n", "2", "--trials", "5", "--locality", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["result"]["reduction"]["matches"], 5);
    assert_eq!(v["result"]["locality"]["violations"].as_array().unwrap().len(), 0);
    assert_eq!(v["manifest"]["seeds"]["specSeed"], 0);

    let dir = tempfile::tempdir().unwrap();
    let fam = write(
        dir.path(),
        "f.json",
        r#"{"params":{"L":1,"m":20},"seed":1,"vary":{"kind":"queriedEntry"},"protocol":{"kind":"bits","bitsPerToken":1,"rule":{"kind":"forward"}}}"#,
    );
    let v = json_of(&seqcomp(&["fool", "--family-spec", &fam]));
    assert_eq!(v["result"]["report"]["guaranteed"], true);
    assert_eq!(v["result"]["certified"], true);

    let tf = write(
        dir.path(),
        "t.json",
        r#"{"params":{"L":1,"m":2},"seed":1,"vary":{"kind":"allTables"},"protocol":{"kind":"transformer"}}"#,
    );
    assert_eq!(seqcomp(&["fool", "--family-spec", &tf]).status.code(), Some(2));
}

#[test]
fn csv_reports_are_key_value_rows() {
    let out = seqcomp(&["eval-task", "--format", "csv", "/dev/null"]);
    assert_eq!(out.status.code(), Some(2));
    let out = seqcomp(&["gen-task", "--L", "1", "--m", "2", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("key,value"));
    assert!(text.lines().any(|l| l == "status,pass"));
    assert!(text.lines().any(|l| l.starts_with("result.chain.0,")));
}
