use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
k = 8
pdk = "amf"

[window]
f_min = 240000
f_max = 300000

[schedule]
total_epochs = 30
spl_epoch = 20
warmup_epochs = 4

[task]
kind = "matrix-fit"

[train]
epochs = 10
"#;

fn ptc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptc")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let line = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("{e}: {line}"))
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn search(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let cfg = config(dir, CONFIG);
    let out = dir.join(name);
    let o = ptc(&["search", "--config", s(&cfg), "--seed", seed, "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn search_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = search(dir.path(), "run", "3");
    for f in ["netlist.json", "report.txt", "summary.json", "log.jsonl", "relaxed.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 30);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["phase"], "warmup");
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = search(dir.path(), "a", "11");
    let b = search(dir.path(), "b", "11");
    for f in ["netlist.json", "report.txt", "log.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), CONFIG);
    let o = ptc(&["search", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn infeasible_window_reports_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &CONFIG.replace("f_min = 240000", "f_min = 10000").replace("f_max = 300000", "f_max = 50000"),
    );
    let out = dir.path().join("x");
    let o = ptc(&["search", "--config", s(&cfg), "--seed", "1", "--out", s(&out)]);
    let rec = error_json(&o);
    assert_eq!(rec["error"], "infeasible");
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(saved, rec);
}

#[test]
fn eval_single_sigma_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = search(dir.path(), "run", "5");
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("eval");
    let o = ptc(&[
        "eval",
        s(&run.join("netlist.json")),
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--sigma-grid",
        "0",
        "--trials",
        "3",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.starts_with("sigma,mse_mean,mse_std\n0,"));

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("netlist.json")).unwrap()).unwrap();
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    let row: Vec<&str> = report.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row[3], doc["footprint"]["crossings"].to_string());
    assert_eq!(row[4], doc["footprint"]["couplers"].to_string());
    assert_eq!(row[5], doc["footprint"]["blocks"].to_string());
}

#[test]
fn tampered_permutation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = search(dir.path(), "run", "6");
    let path = run.join("netlist.json");
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["unitaries"]["v"][0]["cr"][1] = doc["unitaries"]["v"][0]["cr"][0].clone();
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let cfg = dir.path().join("run.toml");
    let o = ptc(&["eval", s(&path), "--config", s(&cfg), "--seed", "1", "--out", s(&dir.path().join("e"))]);
    let rec = error_json(&o);
    assert_eq!(rec["error"], "netlist");
    assert!(rec["message"].as_str().unwrap().contains("unitary v block 0: cr not a permutation"), "{rec}");
}

#[test]
fn footprint_baselines() {
    let o = ptc(&["footprint", "mzi", "--k", "8", "--pdk", "amf", "--seed", "0"]);
    assert!(stdout(&o).lines().nth(1).unwrap().trim_end().ends_with("1909"));
    let o = ptc(&["footprint", "fft", "--k", "32", "--pdk", "amf", "--seed", "0"]);
    assert!(stdout(&o).lines().nth(1).unwrap().trim_end().ends_with("2443"));
    let o = ptc(&["footprint", "fft", "--k", "16", "--pdk", "aim", "--seed", "0"]);
    assert!(stdout(&o).lines().nth(1).unwrap().trim_end().ends_with("1007"));
    let o = ptc(&["footprint", "fft", "--pdk", "nope", "--seed", "0"]);
    assert_eq!(error_json(&o)["error"], "config");
}

#[test]
fn legalize_and_report_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = search(dir.path(), "run", "8");
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("leg");
    let o = ptc(&["legalize", s(&run.join("relaxed.json")), "--config", s(&cfg), "--seed", "8", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = ptc(&["report", s(&out.join("netlist.json")), s(&run.join("netlist.json")), "--seed", "0"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);
    let o = ptc(&["footprint", s(&out.join("netlist.json")), "--seed", "0"]);
    let area: u64 = stdout(&o).lines().nth(1).unwrap().split_whitespace().last().unwrap().parse().unwrap();
    assert!((240..=300).contains(&area));
}
