use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_panel-impute"));
    // keep the caller's environment from leaking into flag defaults
    for (k, _) in std::env::vars() {
        if k.starts_with("PANEL_IMPUTE_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_with_stdin(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary starts");
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_csv(dir: &Path, name: &str, rows: &[(usize, usize, f64)]) -> String {
    let path = dir.join(name);
    let mut body = String::from("unit,period,value\n");
    for (i, t, v) in rows {
        body.push_str(&format!("u{i},{t},{v}\n"));
    }
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn constant_panel(dir: &Path, n: usize, t: usize, c: f64, bump: Option<(usize, usize, f64)>) -> String {
    let mut rows = Vec::new();
    for i in 0..n {
        for s in 0..t {
            let mut v = c;
            if let Some((bi, bt, d)) = bump {
                if (bi, bt) == (i, s) {
                    v += d;
                }
            }
            rows.push((i, s, v));
        }
    }
    write_csv(dir, "const.csv", &rows)
}

fn simulated(dir: &Path, n: usize, t: usize, seed: u64) -> String {
    let path = dir.join(format!("sim_{n}_{t}_{seed}.csv"));
    let out = run(&[
        "simulate", "--N", &n.to_string(), "--T", &t.to_string(), "--seed", &seed.to_string(),
        "--output", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_zero_scales_gives_zero_panel() {
    let out = run(&["simulate", "--N", "5", "--T", "6", "--rank", "0", "--noise", "0", "--fe", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("unit,period,value"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 30);
    for row in rows {
        let v: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(v, 0.0);
    }
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let a = run(&["simulate", "--N", "6", "--T", "7", "--seed", "3"]);
    let b = run(&["simulate", "--N", "6", "--T", "7", "--seed", "3"]);
    let c = run(&["simulate", "--N", "6", "--T", "7", "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn simulate_rejects_negative_noise() {
    let out = run(&["simulate", "--noise=-1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_piped_into_benchmark() {
    let sim = run(&["simulate", "--N", "6", "--T", "8", "--seed", "5"]);
    assert_eq!(code(&sim), 0);
    let out = run_with_stdin(
        &["benchmark", "--input", "-", "--T0", "6", "--fast", "--method", "VR,HZ,MC"],
        &sim.stdout,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["config"]["t0"], 6);
    assert_eq!(report["n_cells_total"], 12);
    let methods = report["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    for m in methods {
        assert!(m["rmse"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn impute_all_methods_on_bumped_constant_panel() {
    let dir = tempfile::tempdir().unwrap();
    let path = constant_panel(dir.path(), 6, 8, 3.0, Some((2, 7, 2.0)));
    let out = run(&["impute", "--input", &path, "--unit", "u2", "--period", "7"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["observed"].as_f64().unwrap(), 5.0);
    let results = report["results"].as_array().unwrap();
    assert_eq!(results.len(), 5);
    for r in results {
        let effect = r["effect"].as_f64().unwrap();
        assert!((effect - 2.0).abs() < 1e-6, "{}: {effect}", r["method"]);
    }
}

#[test]
fn impute_single_method_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = constant_panel(dir.path(), 5, 6, 1.0, None);
    let out = run(&[
        "impute", "--input", &path, "--unit", "u0", "--period", "5", "--method", "MC",
        "--output-format", "csv",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,value,observed,effect,complexity,error"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("MC,"), "{row}");
    assert!(lines.next().is_none());
}

#[test]
fn impute_is_reproducible_with_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulated(dir.path(), 8, 10, 11);
    let args = ["impute", "--input", &path, "--unit", "u3", "--period", "10", "--seed", "7"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn job_count_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulated(dir.path(), 7, 9, 2);
    let base = ["benchmark", "--input", path.as_str(), "--T0", "7", "--fast"];
    let one = bin().args(base).args(["--jobs", "1"]).output().unwrap();
    let eight = bin().args(base).args(["--jobs", "8"]).output().unwrap();
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    assert_eq!(one.stdout, eight.stdout);
}

#[test]
fn log_of_zero_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = constant_panel(dir.path(), 4, 5, 0.0, None);
    let out = run(&["impute", "--input", &path, "--unit", "u0", "--period", "4", "--transform", "log"]);
    assert_eq!(code(&out), 1);
    let err: Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(err["error"], "DomainError");
    assert!(err["message"].as_str().unwrap().len() > 0);
}

#[test]
fn t0_out_of_range_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = constant_panel(dir.path(), 4, 6, 1.0, None);
    for t0 in ["6", "9", "1"] {
        let out = run(&["benchmark", "--input", &path, "--T0", t0]);
        assert_eq!(code(&out), 2, "T0={t0}");
    }
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(code(&run(&["benchmark", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = constant_panel(dir.path(), 4, 6, 1.0, None);
    assert_eq!(code(&run(&["benchmark", "--input", &path, "--method", "XYZ"])), 2);
    assert_eq!(code(&run(&["impute", "--input", &path, "--unit", "nope", "--period", "5"])), 2);
    assert_eq!(code(&run(&["benchmark", "--input", &path, "--jobs", "0"])), 2);
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let out = run(&["benchmark", "--input", "/definitely/not/here.csv"]);
    assert_eq!(code(&out), 1);
    let err: Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(err["error"], "IoError");
}

#[test]
fn failing_method_exits_one_but_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    // two periods: the target has only one earlier period to learn from
    let path = constant_panel(dir.path(), 4, 2, 1.0, None);
    let out = run(&["impute", "--input", &path, "--unit", "u0", "--period", "1", "--method", "VR"]);
    assert_eq!(code(&out), 1);
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(report["results"][0]["error"].is_object());
    let err: Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(err["error"], "InsufficientHistory");
}

#[test]
fn environment_overrides_match_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulated(dir.path(), 6, 8, 9);
    let flags = run(&[
        "benchmark", "--input", &path, "--T0", "6", "--seed", "13", "--method", "HZ,MC",
    ]);
    let env = bin()
        .args(["benchmark"])
        .env("PANEL_IMPUTE_INPUT", &path)
        .env("PANEL_IMPUTE_T0", "6")
        .env("PANEL_IMPUTE_SEED", "13")
        .env("PANEL_IMPUTE_METHOD", "HZ,MC")
        .output()
        .unwrap();
    assert_eq!(code(&flags), 0, "{}", stderr(&flags));
    assert_eq!(flags.stdout, env.stdout);
    let report: Value = serde_json::from_slice(&env.stdout).unwrap();
    assert_eq!(report["config"]["seed"], 13);
}

#[test]
fn benchmark_csv_and_table_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulated(dir.path(), 6, 8, 4);
    let csv = run(&["benchmark", "--input", &path, "--T0", "6", "--fast", "--output-format", "csv"]);
    assert_eq!(code(&csv), 0, "{}", stderr(&csv));
    let text = stdout(&csv);
    assert!(text.starts_with("method,metric,value\n"));
    assert!(text.contains("ENS_VC,rmse,"));

    let table = run(&["benchmark", "--input", &path, "--T0", "6", "--fast", "--output-format", "table"]);
    assert_eq!(code(&table), 0, "{}", stderr(&table));
    let text = stdout(&table);
    let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(
        header,
        ["Periods", "VR", "HZ", "MC", "Ens-VC", "Ens-HC", "VC-w-VR", "VC-w-HZ", "VC-w-MC"]
    );
    let alias = run(&["benchmark", "--input", &path, "--T0", "6", "--fast", "--output-format", "text-table"]);
    assert_eq!(alias.stdout, table.stdout);
}

#[test]
fn wide_input_matches_long_input() {
    let dir = tempfile::tempdir().unwrap();
    let long = simulated(dir.path(), 5, 7, 8);
    let text = std::fs::read_to_string(&long).unwrap();
    let mut grid = vec![vec![String::new(); 7]; 5];
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let i: usize = f[0].trim_start_matches('u').parse().unwrap();
        let t: usize = f[1].parse().unwrap();
        grid[i][t - 1] = f[2].to_string();
    }
    // periods deliberately out of order; the reader sorts them
    let order = [3, 1, 2, 7, 4, 6, 5];
    let mut wide = String::from("unit");
    for t in order {
        wide.push_str(&format!(",{t}"));
    }
    wide.push('\n');
    for (i, row) in grid.iter().enumerate() {
        let cells: Vec<&str> = order.iter().map(|t| row[t - 1].as_str()).collect();
        wide.push_str(&format!("u{i},{}\n", cells.join(",")));
    }
    let wide_path = dir.path().join("wide.csv");
    std::fs::write(&wide_path, wide).unwrap();
    let a = run(&["impute", "--input", &long, "--unit", "u1", "--period", "7", "--method", "VR"]);
    let b = run(&[
        "impute", "--input", wide_path.to_str().unwrap(), "--format", "wide", "--unit", "u1",
        "--period", "7", "--method", "VR",
    ]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}
