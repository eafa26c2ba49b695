use std::path::Path;
use std::process::{Command, Output};

fn dmbqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmbqc"))
        .args(args)
        .env("DMBQC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_target(dir: &Path, name: &str, rows: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, format!("{{\"rows\": {rows}}}")).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn lists_builtins() {
    let out = dmbqc(&["list-builtins"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["fourier4", "cz6", "linear_cluster4"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn classifies_targets() {
    let dir = tempfile::tempdir().unwrap();
    let fourier = write_target(dir.path(), "f.json", "[[0, -1], [1, 0]]");
    let out = dmbqc(&["classify", "--target", &fourier]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["class"], "trivial");

    let cz = write_target(
        dir.path(),
        "cz.json",
        "[[1, 0, 0, 0], [0, 1, 0, 0], [0, 1, 1, 0], [1, 0, 0, 1]]",
    );
    let out = dmbqc(&["classify", "--target", &cz]);
    let v = stdout_json(&out);
    assert_eq!(v["class"], "requires_ancillas");
    assert_eq!(v["min_ancillas"], 3);

    let id = write_target(dir.path(), "id.json", "[[1, 0], [0, 1]]");
    let v = stdout_json(&dmbqc(&["classify", "--target", &id]));
    assert_eq!(v["class"], "trivial");
    assert_eq!(v["o"], serde_json::json!([[1.0]]));
    assert_eq!(v["r"], serde_json::json!([1.0]));
}

#[test]
fn non_symplectic_target_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_target(dir.path(), "bad.json", "[[2, 0], [0, 2]]");
    let out = dmbqc(&["classify", "--target", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("symplectic"));
}

#[test]
fn synth_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let report = report.to_str().unwrap();
    let out = dmbqc(&[
        "synth", "--scenario", "fourier4", "--seed", "3", "--generations", "150", "--restarts", "2", "--out", report,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("digest"));

    let out = dmbqc(&["verify", "--report", report, "--samples", "20000", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    v["scenario"]["squeezing"][0] = serde_json::json!({"db": -8.0});
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, v.to_string()).unwrap();
    let out = dmbqc(&["verify", "--report", tampered.to_str().unwrap(), "--samples", "10000"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inconsistent_scenario_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = serde_json::to_value(dmbqc::scenario::builtin("fourier4").unwrap()).unwrap();
    file["m"] = serde_json::json!(4);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, file.to_string()).unwrap();
    let out = dmbqc(&[
        "synth", "--scenario", path.to_str().unwrap(), "--out", dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn malformed_scenario_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\n  \"name\": \"x\",\n  \"n\": \"one\"\n}\n").unwrap();
    let out = dmbqc(&[
        "synth", "--scenario", path.to_str().unwrap(), "--out", dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}
