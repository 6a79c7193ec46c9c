use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn siplab(args: &[&str]) -> Output {
    siplab_env(args, &[])
}

fn siplab_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_siplab"));
    cmd.args(args).env_remove("SIPLAB_STATE_CAP").env_remove("SOURCE_DATE_EPOCH");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Data rows of a CSV with a manifest comment and a header line.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# manifest: {"));
    lines.next().unwrap();
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn distinct(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    v
}

fn eigenvalues(rows: &[Vec<String>], op: &str) -> Vec<f64> {
    rows.iter()
        .filter(|r| r[0] == op)
        .map(|r| r[3].parse().unwrap())
        .collect()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn spectrum_complete_three() {
    let o = siplab(&["spectrum", "--graph", "complete(3)", "--k", "2"]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&stdout(&o));
    let sip = distinct(eigenvalues(&rows, "sip"));
    let want = [0.0, 1.0, 8.0 / 3.0];
    assert_eq!(sip.len(), 3);
    for (a, b) in sip.iter().zip(want) {
        assert!((a - b).abs() < 1e-9, "{sip:?}");
    }
}

#[test]
fn spectrum_two_site_path() {
    let o = siplab(&["spectrum", "--graph", "path(2)", "--k", "1"]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&stdout(&o));
    for op in ["rw", "sip"] {
        let ev = eigenvalues(&rows, op);
        assert_eq!(ev.len(), 2);
        assert!(ev[0].abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);
    }
}

#[test]
fn spectrum_from_graph_file_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(
        dir.path(),
        "g.json",
        r#"{"n": 3, "edges": [[0, 1, 1.0], [1, 2, 2.0]], "alpha": [1.0, 0.5, 2.0]}"#,
    );
    let o = siplab(&["spectrum", "--graph", &g, "--k", "2", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["sip_eigenvalues"].as_array().unwrap().len(), 6);
    assert!(v["manifest"]["input_digest"].as_str().unwrap().starts_with("sha256:"));
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{not json");
    assert_eq!(code(&siplab(&["spectrum", "--graph", &bad, "--k", "1"])), 2);
    let dup = write(
        dir.path(),
        "dup.json",
        r#"{"n": 2, "edges": [[0, 1, 1.0], [1, 0, 1.0]], "alpha": [1.0, 1.0]}"#,
    );
    assert_eq!(code(&siplab(&["spectrum", "--graph", &dup, "--k", "1"])), 2);
    assert_eq!(code(&siplab(&["spectrum", "--graph", "/no/such/file", "--k", "1"])), 2);
    assert_eq!(
        code(&siplab(&["spectrum", "--graph", "path(3)", "--alpha", "1,2", "--k", "1"])),
        2
    );
    assert_eq!(code(&siplab(&["verify", "--graph", "path(3)", "--K", "1"])), 2);
}

#[test]
fn state_cap_exits_three() {
    let o = siplab_env(
        &["spectrum", "--graph", "complete(3)", "--k", "3"],
        &[("SIPLAB_STATE_CAP", "5")],
    );
    assert_eq!(code(&o), 3);
    let o = siplab_env(
        &["spectrum", "--graph", "complete(3)", "--k", "3"],
        &[("SIPLAB_STATE_CAP", "lots")],
    );
    assert_eq!(code(&o), 2);
}

fn verify_json(args: &[&str]) -> (i32, Value) {
    let o = siplab(args);
    (code(&o), serde_json::from_str(&stdout(&o)).unwrap())
}

#[test]
fn verify_unit_complete_graph_passes_everything() {
    let (c, v) = verify_json(&["verify", "--graph", "complete(4)", "--K", "4", "--suite", "all"]);
    assert_eq!(c, 0);
    assert_eq!(v["pass"], true);
    assert_eq!(v["summary"]["failed"], 0);
    assert_eq!(v["summary"]["not_applicable"], 0);
}

#[test]
fn verify_small_alpha_marks_equality_not_applicable() {
    let (c, v) = verify_json(&[
        "verify", "--graph", "path(3)", "--alpha", "0.5,0.5,0.5", "--K", "4", "--suite", "sip",
    ]);
    assert_eq!(c, 0);
    let checks = v["checks"].as_array().unwrap();
    let equality: Vec<&Value> = checks
        .iter()
        .filter(|c| c["name"].as_str().unwrap().starts_with("equality"))
        .collect();
    assert_eq!(equality.len(), 3);
    assert!(equality.iter().all(|c| c["status"] == "not-applicable"));
    assert!(checks
        .iter()
        .filter(|c| c["name"].as_str().unwrap().starts_with("lower-bound")
            || c["name"].as_str().unwrap().starts_with("upper-bound"))
        .all(|c| c["status"] == "pass"));
}

#[test]
fn verify_lookdown_on_cycle() {
    let (c, v) = verify_json(&["verify", "--graph", "cycle(3)", "--K", "3", "--suite", "lookdown"]);
    assert_eq!(c, 0);
    assert!(v["summary"]["passed"].as_u64().unwrap() > 50);
}

#[test]
fn verify_bep_on_weighted_file() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(
        dir.path(),
        "g.json",
        r#"{"n": 3, "edges": [[0, 1, 0.7], [1, 2, 1.9], [0, 2, 0.2]], "alpha": [0.3, 1.4, 2.2]}"#,
    );
    let (c, v) = verify_json(&["verify", "--graph", &g, "--K", "3", "--suite", "bep"]);
    assert_eq!(c, 0, "{v:#}");
}

#[test]
fn sweep_path_ratios_within_sandwich() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "sweep.json",
        r#"{"graphs": ["path(4)"], "alpha": {"constant": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]}, "k_max": 5}"#,
    );
    let o = siplab(&["sweep", &spec]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 50);
    for r in &rows {
        let ratio: f64 = r[5].parse().unwrap();
        let amin: f64 = r[6].parse().unwrap();
        assert!(ratio >= amin.min(1.0) - 1e-9 && ratio <= 1.0 + 1e-9, "{r:?}");
        assert!(r[7].is_empty());
    }
}

#[test]
fn sweep_complete_graph_ratio_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "sweep.json",
        r#"{"graphs": ["complete(3)", "complete(4)"], "alpha": {"log_uniform": {"min": 0.05, "max": 5.0, "samples": 4}}, "k_max": 4, "seed": 9}"#,
    );
    let o = siplab(&["sweep", &spec]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 2 * 4 * 4);
    for r in &rows {
        let ratio: f64 = r[5].parse().unwrap();
        assert!((ratio - 1.0).abs() <= 1e-9, "{r:?}");
    }
}

#[test]
fn sweep_empty_and_malformed_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "e.json", r#"{"graphs": [], "alpha": {"constant": [1.0]}, "k_max": 3}"#);
    assert_eq!(code(&siplab(&["sweep", &empty])), 2);
    let none = write(dir.path(), "n.json", r#"{"graphs": ["path(3)"], "alpha": {"constant": []}, "k_max": 3}"#);
    assert_eq!(code(&siplab(&["sweep", &none])), 2);
    let bad = write(dir.path(), "b.json", "[1, 2");
    assert_eq!(code(&siplab(&["sweep", &bad])), 2);
}

#[test]
fn sweep_row_errors_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.json", r#"{"graphs": ["path(3)"], "alpha": {"constant": [1.0]}, "k_max": 4}"#);
    let o = siplab_env(&["sweep", &spec], &[("SIPLAB_STATE_CAP", "12")]);
    assert_eq!(code(&o), 3);
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 4);
    assert!(rows[0][7].is_empty() && rows[1][7].is_empty());
    assert!(!rows[3][7].is_empty());
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "s.json",
        r#"{"graphs": ["cycle(4)", "path(3)"], "alpha": {"log_uniform": {"min": 0.1, "max": 3.0, "samples": 3}}, "k_max": 3, "seed": 4}"#,
    );
    let a = stdout(&siplab(&["sweep", &spec]));
    let b = stdout(&siplab(&["--jobs", "1", "sweep", &spec]));
    assert_eq!(a, b);

    let sim = [
        "simulate", "--graph", "cycle(3)", "--mode", "lookdown", "--k", "3", "--paths", "500", "--seed", "17",
        "--times", "0.2,0.7",
    ];
    let a = stdout(&siplab(&sim));
    let mut with_jobs = vec!["--jobs", "1"];
    with_jobs.extend_from_slice(&sim);
    let b = stdout(&siplab(&with_jobs));
    assert_eq!(a, b);
    let rows = csv_rows(&a);
    let total: u64 = rows.iter().map(|r| r[2].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 1000);
}

#[test]
fn manifest_timestamp_follows_source_date_epoch() {
    let args = ["spectrum", "--graph", "path(2)", "--k", "1", "--format", "json"];
    let v: Value = serde_json::from_str(&stdout(&siplab(&args))).unwrap();
    assert!(v["manifest"]["timestamp"].is_null());
    let o = siplab_env(&args, &[("SOURCE_DATE_EPOCH", "1700000000")]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["manifest"]["timestamp"], 1_700_000_000u64);
}

#[test]
fn simulate_statistical_checks() {
    let o = siplab(&[
        "simulate", "--graph", "path(2)", "--mode", "lookdown", "--k", "2", "--initial", "[2,0]",
        "--times", "0.5", "--paths", "100000", "--seed", "3", "--test", "projection",
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = siplab(&[
        "simulate", "--graph", "path(2)", "--k", "2", "--paths", "20000", "--seed", "5", "--test", "relaxation",
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rate = v["report"]["fitted_rate"].as_f64().unwrap();
    assert!((rate - 2.0).abs() < 0.2);
    let o = siplab(&["simulate", "--graph", "path(2)", "--k", "2", "--initial", "[1,0]"]);
    assert_eq!(code(&o), 2);
    let o = siplab(&["simulate", "--graph", "path(2)", "--k", "2", "--mode", "neither"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn tv_curve_and_report() {
    let o = siplab(&["tv-curve", "--graph", "path(2)", "--k", "3"]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[4] == "true"));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.txt");
    let o = siplab(&["report", "--graph", "cycle(4)", "--K", "3", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(out).unwrap();
    assert!(text.contains("overall: pass"));
    assert!(text.starts_with("# manifest: "));
}
