use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pool_ldp::ldp::bernoulli_kl;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pool-ldp"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn p1() -> String {
    configs().join("portfolio1.json").display().to_string()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn lln_writes_the_path_and_prints_the_terminal_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("lln");
    let o = run(&["lln", "--config", &p1(), "--out", out.to_str().unwrap(), "--steps", "200"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let (header, rows) = read_csv(&out.join("lln.csv"));
    assert_eq!(header, ["t", "L"]);
    assert_eq!(rows.len(), 201);
    let last: f64 = rows[200][1].parse().unwrap();
    assert!(stdout(&o).contains(&format!("{last:.6}")));
    let m = manifest(&out);
    assert_eq!(m["subcommand"], "lln");
    assert_eq!(m["grid"]["steps"], 200);
    assert_eq!(m["outputs"], serde_json::json!(["lln.csv"]));
}

#[test]
fn independent_rate_curve_is_bernoulli_kl() {
    let tmp = tempfile::tempdir().unwrap();
    let lln_dir = tmp.path().join("lln");
    let rate_dir = tmp.path().join("rate");
    let o = run(&["lln", "--config", &p1(), "--variant", "independent", "--out", lln_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let (_, rows) = read_csv(&lln_dir.join("lln.csv"));
    let pbar: f64 = rows.last().unwrap()[1].parse().unwrap();

    let o = run(&[
        "rate",
        "--config",
        &p1(),
        "--ells",
        "0.5:0.95:0.05",
        "--variant",
        "independent",
        "--out",
        rate_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let (header, rows) = read_csv(&rate_dir.join("rate.csv"));
    assert_eq!(header, ["ell", "I", "converged", "iters"]);
    assert_eq!(rows.len(), 10);
    for row in rows {
        let ell: f64 = row[0].parse().unwrap();
        let i: f64 = row[1].parse().unwrap();
        assert_eq!(row[2], "true");
        assert!((i - bernoulli_kl(ell, pbar)).abs() < 1e-3, "{ell}: {i}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = run(&["lln", "--config", "/nonexistent/cfg.json", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/cfg.json"));

    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["rate"])), 2);
    assert_eq!(code(&run(&["rate", "--config", &p1(), "--variant", "bogus"])), 2);
    let bad_levels = run(&["rate", "--config", &p1(), "--ells", "0.9,0.8", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&bad_levels), 2);
    let below = run(&["tail", "--config", &p1(), "--ells", "0.5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&below), 2);

    let text = fs::read_to_string(configs().join("portfolio1.json")).unwrap();
    let typo = write_config(tmp.path(), &text.replace("lambda_bar", "lambda_barr"));
    assert_eq!(code(&run(&["validate", "--config", &typo, "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn non_critical_scaling_rejects_rate_runs_only() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("portfolio1.json")).unwrap();
    let cfg = write_config(
        tmp.path(),
        &text.replace(r#""scaling": {"rule": "inv_sqrt_n"}"#, r#""scaling": {"a": 1.0, "q": 0.3}"#),
    );
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(code(&run(&["lln", "--config", &cfg, "--out", out])), 0);
    assert_eq!(code(&run(&["rate", "--config", &cfg, "--ells", "0.85", "--out", out])), 2);
    // without the factor channel no limit constant is needed
    let o = run(&["rate", "--config", &cfg, "--ells", "0.85", "--variant", "contagion", "--out", out]);
    assert_eq!(code(&o), 0);
}

#[test]
fn unconverged_solves_exit_with_one_and_still_write() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("portfolio1.json")).unwrap();
    let cfg = write_config(tmp.path(), &text.replace(r#""run": {}"#, r#""run": {"max_iter": 1}"#));
    let out = tmp.path().join("o");
    let o = run(&["rate", "--config", &cfg, "--ells", "0.9", "--steps", "30", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{o:?}");
    let (_, rows) = read_csv(&out.join("rate.csv"));
    assert_eq!(rows[0][2], "false");
}

#[test]
fn simulate_reruns_bit_identically_from_its_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = run(&[
        "simulate", "--config", &p1(), "--n", "40", "--reps", "30", "--seed", "9", "--steps", "50", "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let m = manifest(&a);
    assert_eq!(m["config"]["run"]["reps"], 30);
    assert_eq!(m["seeds"]["simulation"], 9);
    let rerun = a.join("manifest.json");
    let o = run(&["simulate", "--config", rerun.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{o:?}");
    for file in ["sim_summary.csv", "histogram.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let (header, rows) = read_csv(&a.join("histogram.csv"));
    assert_eq!(header, ["bin", "count"]);
    assert_eq!(rows.len(), 41);
    let total: usize = rows.iter().map(|r| r[1].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 30);
    let (header, _) = read_csv(&a.join("sim_summary.csv"));
    assert_eq!(header, ["t", "mean", "q10", "q50", "q90"]);
}

#[test]
fn extremals_rerun_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let cfg = configs().join("hetero_ab.json");
    let o = run(&[
        "extremals",
        "--config",
        cfg.to_str().unwrap(),
        "--ell",
        "0.9",
        "--steps",
        "30",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let (header, first) = read_csv(&a.join("extremals.csv"));
    assert_eq!(header, ["t", "phi_1", "phi_2", "phi_bar", "psi", "u"]);
    assert_eq!(first.len(), 31);
    let terminal: f64 = first[30][3].parse().unwrap();
    assert!((terminal - 0.9).abs() < 1e-9);

    let rerun = a.join("manifest.json");
    let o = run(&["extremals", "--config", rerun.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let (_, second) = read_csv(&b.join("extremals.csv"));
    for (x, y) in first.iter().flatten().zip(second.iter().flatten()) {
        let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
        assert!((x - y).abs() <= 1e-9);
    }
}

#[test]
fn tail_defaults_to_levels_above_the_typical_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = run(&["tail", "--config", &p1(), "--variant", "independent", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{o:?}");
    let (header, rows) = read_csv(&out.join("tail.csv"));
    assert_eq!(header, ["ell", "I", "tail", "log10_tail"]);
    assert_eq!(rows.first().unwrap()[0], "0.5");
    assert_eq!(rows.last().unwrap()[0], "0.95");
    for r in rows {
        let i: f64 = r[1].parse().unwrap();
        let log10: f64 = r[3].parse().unwrap();
        assert!((log10 + 200.0 * i / std::f64::consts::LN_10).abs() < 1e-9);
    }
}

#[test]
fn quick_reproduction_reports_every_section() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = run(&["reproduce-paper", "--quick", "--steps", "30", "--out", out.to_str().unwrap()]);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(report, stdout(&o));
    let failed = report.lines().any(|l| l.starts_with("[FAIL]"));
    assert_eq!(code(&o), if failed { 1 } else { 0 });
    let sections: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(sections.as_array().unwrap().len(), 8);
    let m = manifest(&out);
    for f in m["outputs"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists());
    }
    assert!(out.join("extremals_ab_full.csv").exists());
}
