use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cgra-codesign"))
}

fn cli(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn data(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel).display().to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn trace(o: &Output) -> Vec<Value> {
    stdout(o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn run_writes_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cli(&[
        "run", "--kernel", "relu", "--backend", "heuristic", "--seed", "1", "--iterations", "5", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut files: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["best_design.json", "history.jsonl", "metrics.json"]);
}

#[test]
fn run_records_the_speedup_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run", "--kernel", "conv", "--iterations", "2", "--objective", "min-power", "--min-speedup", "1.5", "--json",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(m["objective"], json!({"mode": "MIN_POWER", "min_speedup": 1.5}));
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m, on_disk);
}

#[test]
fn run_config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.json",
        &json!({"kernel": "relu", "iterations": 9, "proposals": 4, "top_k": 2, "out_dir": dir.path().join("o")}).to_string(),
    );
    let o = cli(&["run", "--config", cfg.to_str().unwrap(), "--iterations", "2", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(m["iterations"], 2);
    assert_eq!(m["per_iteration"][0]["proposed"], 4);
}

#[test]
fn run_config_errors_exit_2() {
    let o = cli(&["run", "--config", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).is_empty());
    assert!(!stderr(&o).is_empty());

    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", "--kernel", "relu", "--proposals", "1", "--top-k", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["run", "--kernel", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_constraint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", "--kernel", "relu", "--iterations", "1", "--min-speedup", "100000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("NO_FEASIBLE_DESIGN"));
    assert!(dir.path().join("best_design.json").is_file());
}

#[test]
fn unknown_flags_are_rejected() {
    assert_eq!(cli(&["kernels", "--bogus"]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn validate_reference_design() {
    let o = cli(&["validate", &data("designs/spmv_reference.json")]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "valid\n");
}

#[test]
fn validate_reports_violations() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.json",
        r#"{"id": "bad", "rows": 0, "cols": 2, "fu_kinds": ["ADD"], "config_mem_depth": 4, "topology": "MESH", "unroll_factor": 1, "vectorize_factor": 1}"#,
    );
    let o = cli(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("ROWS_RANGE"));
    let o = cli(&["validate", p.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(3));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["valid"], false);
    assert_eq!(v["violations"][0]["code"], "ROWS_RANGE");

    let p = write(dir.path(), "syntax.json", "{ not json");
    assert_eq!(cli(&["validate", p.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn map_without_multiplier_fails_with_missing_kind() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "nomul.json",
        r#"{"id": "nomul", "rows": 3, "cols": 3, "fu_kinds": ["ADD", "LOAD"], "config_mem_depth": 8, "topology": "MESH", "unroll_factor": 1, "vectorize_factor": 1}"#,
    );
    let o = cli(&["map", p.to_str().unwrap(), "--kernel", "conv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("MISSING_FU_KIND"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn map_outputs() {
    let arch = data("designs/spmv_reference.json");
    let o = cli(&["map", &arch, "--kernel", "spmv", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let ii = v["mapping"]["ii"].as_u64().unwrap();
    assert!(ii >= v["res_mii"].as_u64().unwrap().max(v["rec_mii"].as_u64().unwrap()));
    let o = cli(&["map", &arch, "--kernel", "spmv", "--dump"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("node") && text.contains("->"));
}

#[test]
fn evaluate_is_byte_stable() {
    let arch = data("designs/spmv_reference.json");
    let a = cli(&["evaluate", &arch, "--kernel", "spmv", "--json"]);
    let b = cli(&["evaluate", &arch, "--kernel", "spmv", "--json"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(v["design_id"], "spmv-reference");
    assert_eq!(v["feasible"], true);
}

#[test]
fn select_sim_constant_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let steps: Vec<Value> = (0..12).map(|_| json!({"l_score": 2.0, "t_score": 2.0})).collect();
    let script = json!({
        "config": {"conf_threshold": 0.9, "alpha": 0.5, "sigma": 1.0, "validation_interval": 10},
        "steps": steps,
    });
    let p = write(dir.path(), "s.json", &script.to_string());
    let o = cli(&["select-sim", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = trace(&o);
    assert_eq!(t.len(), 12);
    // oracle: step i runs the tool while 1 - 0.5^(i-1) < threshold
    let expected = (1..).find(|&i: &i32| 1.0 - 0.5f64.powi(i - 1) >= 0.9 && i % 10 != 0).unwrap();
    let first_llm = t.iter().find(|r| r["mode"] == "LLM").unwrap();
    assert_eq!(first_llm["iteration"], expected);
    let mut tool_steps = 0;
    for r in &t {
        tool_steps += (r["mode"] == "TOOL") as i32;
        assert!((r["conf"].as_f64().unwrap() - (1.0 - 0.5f64.powi(tool_steps))).abs() < 1e-9);
    }
}

#[test]
fn select_sim_interval_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let steps: Vec<Value> = (0..20).map(|_| json!({"l_score": 1.0, "t_score": 1.0})).collect();
    let p = write(
        dir.path(),
        "s.json",
        &json!({"config": {"conf_threshold": 0.0, "validation_interval": 5}, "steps": steps}).to_string(),
    );
    let o = cli(&["select-sim", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for r in trace(&o) {
        let tool = r["iteration"].as_u64().unwrap() % 5 == 0;
        assert_eq!(r["mode"], if tool { "TOOL" } else { "LLM" });
    }
    let p = write(dir.path(), "empty.json", r#"{"steps": []}"#);
    assert_eq!(cli(&["select-sim", p.to_str().unwrap()]).status.code(), Some(2));
    let p = write(dir.path(), "bad.json", r#"{"steps": [{"l_score": "x"}]}"#);
    assert_eq!(cli(&["select-sim", p.to_str().unwrap()]).status.code(), Some(2));
    let p = write(dir.path(), "cfg.json", r#"{"config": {"alpha": 0}, "steps": [{"l_score": 1, "t_score": 1}]}"#);
    assert_eq!(cli(&["select-sim", p.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn report_on_gemm_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", "--kernel", "gemm", "--iterations", "20", "--seed", "7", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let history = dir.path().join("history.jsonl");
    let csv = dir.path().join("series.csv");
    let o = cli(&["report", history.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 20);
    let best: Vec<f64> = rows.iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    assert!(stdout(&o).contains(&text));

    let o = cli(&["report", history.to_str().unwrap(), "--json"]);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let metrics: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["sr1"], metrics["sr1"]);
    assert_eq!(report["sr2"], metrics["sr2"]);
    assert_eq!(report["chosen"], metrics["chosen"]["report"]);
}

#[test]
fn report_rejects_bad_histories() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "empty.jsonl", "");
    assert_eq!(cli(&["report", p.to_str().unwrap()]).status.code(), Some(2));
    let p = write(dir.path(), "v2.jsonl", r#"{"schema_version": 2, "seq": 0, "iteration": 0, "event": "run_start", "config": {}}"#);
    let o = cli(&["report", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SCHEMA_MISMATCH"));
    let p = write(dir.path(), "start_only.jsonl", r#"{"schema_version": 1, "seq": 0, "iteration": 0, "event": "run_start", "config": {}}"#);
    assert_eq!(cli(&["report", p.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn kernels_lists_the_corpus() {
    let o = cli(&["kernels", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|k| k["name"].as_str().unwrap()).collect();
    for k in ["fir", "gemm", "spmv", "fft", "relu"] {
        assert!(names.contains(&k));
    }
    assert_eq!(v[0]["census"].as_object().unwrap().values().map(|n| n.as_u64().unwrap()).sum::<u64>(), v[0]["nodes"].as_u64().unwrap());
    let o = cli(&["kernels"]);
    assert!(stdout(&o).lines().count() > names.len());
}
