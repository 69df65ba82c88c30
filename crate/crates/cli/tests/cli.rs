use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn abx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abx"))
        .args(args)
        .env_remove("ABX_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = abx(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[test]
fn analyze_example2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["analyze", "--scenario", "example2", "--out", out]);
    let v = json(&dir.path().join("analysis.json"));
    assert!((v["ade"].as_f64().unwrap() + 7.0e-6).abs() < 2e-6);
    assert!((v["gte"].as_f64().unwrap() - 0.0087).abs() < 2e-4);
    assert_eq!(v["K"], 30);
}

#[test]
fn analyze_logit_intensive_reading() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&[
        "analyze",
        "--scenario",
        "logit",
        "--K",
        "200",
        "--arrivals",
        "fixed",
        "--outside-option",
        "per-listing",
        "--out",
        out,
        "--format",
        "json,csv",
    ]);
    let v = json(&dir.path().join("analysis.json"));
    assert!((v["gte"].as_f64().unwrap() - 0.022).abs() < 0.002);
    let (header, rows) = csv_rows(&dir.path().join("analysis.csv"));
    assert_eq!(header, "quantity,value");
    assert!(rows.iter().any(|r| r[0] == "sigma_ub_sq"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad_k = abx(&["analyze", "--K", "0", "--out", out]);
    assert_eq!(bad_k.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_k.stderr).contains("K must be"));

    assert_eq!(abx(&["figures", "fig9"]).status.code(), Some(2));
    assert_eq!(
        abx(&["analyze", "--scenario", "example2", "--K", "40"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        abx(&["analyze", "--scenario", "example1", "--v0", "1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        abx(&[
            "analyze",
            "--scenario",
            "example1",
            "--strict",
            "--out",
            out
        ])
        .status
        .code(),
        Some(2)
    );

    let threads = Command::new(env!("CARGO_BIN_EXE_abx"))
        .args(["analyze", "--out", out])
        .env("ABX_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn numerical_failure_exit_code() {
    // a single listing that is never booked: the variance limit is zero
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    fs::write(
        &model,
        r#"{"K": 1, "lambda": 1.0, "tau": [1.0], "p0": [0.0, 0.0], "p1": [0.0, 0.0]}"#,
    )
    .unwrap();
    let out = abx(&[
        "analyze",
        "--model",
        model.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "simulate",
            "--scenario",
            "logit",
            "--K",
            "20",
            "--N",
            "500",
            "--R",
            "300",
            "--seed",
            "7",
            "--format",
            "json,csv",
            "--out",
            out.to_str().unwrap(),
        ]);
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["summary.json", "replications.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let (header, rows) = csv_rows(&a.join("replications.csv"));
    assert_eq!(header, "rep,gte_hat,var_hat,t_stat,n1,n0,rejected");
    assert_eq!(rows.len(), 300);
    let s = json(&a.join("summary.json"));
    assert_eq!(s["replications"], 300);
    assert_eq!(s["config"]["seed"], 7);
}

#[test]
fn simulate_aa_level() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "simulate",
        "--scenario",
        "logit",
        "--K",
        "50",
        "--aa",
        "--N",
        "2000",
        "--R",
        "20000",
        "--alpha",
        "0.05",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let s = json(&dir.path().join("summary.json"));
    let rate = s["reject_rate"].as_f64().unwrap();
    let se = (0.05f64 * 0.95 / 20000.0).sqrt();
    assert!((rate - 0.05).abs() <= 3.0 * se, "{rate}");
}

#[test]
fn simulate_example1_inflated_false_positives() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "simulate",
        "--scenario",
        "example1",
        "--N",
        "5000",
        "--R",
        "10000",
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let s = json(&dir.path().join("summary.json"));
    let rate = s["reject_rate"].as_f64().unwrap();
    let se = s["reject_se"].as_f64().unwrap();
    assert!(rate > 0.05 + 3.0 * se, "{rate}");
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"scenario": "logit", "K": 30, "delta": 0.1, "format": ["json"], "out": "from_config"}"#,
    )
    .unwrap();
    let out = dir.path().join("flags");
    ok(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--K",
        "25",
        "--out",
        out.to_str().unwrap(),
    ]);
    let v = json(&out.join("analysis.json"));
    assert_eq!(v["K"], 25);

    // unknown keys are rejected
    fs::write(&cfg, r#"{"scenario": "logit", "kk": 3}"#).unwrap();
    assert_eq!(
        abx(&["analyze", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn model_document_input() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    fs::write(
        &model,
        r#"{"K": 3, "lambda": 2.0, "tau": {"form": "linear", "tau_bar": 1.0},
            "p0": [0.6, 0.4, 0.2, 0.0], "p1": [0.7, 0.5, 0.3, 0.0]}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&[
        "analyze",
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(json(&out.join("analysis.json"))["K"], 3);
}

#[test]
fn figure_csvs_have_documented_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["figures", "fig1", "--out", out, "--format", "csv,svg,json"]);
    ok(&["figures", "fig2", "--out", out, "--format", "csv,svg"]);
    ok(&["figures", "fig4", "--out", out, "--format", "csv,svg"]);
    ok(&["figures", "appendixC", "--out", out]);
    ok(&[
        "figures", "fig3", "--R", "2000", "--out", out, "--format", "csv,svg",
    ]);

    let (h1, r1) = csv_rows(&dir.path().join("fig1.csv"));
    assert_eq!(h1, "K,sigma_ub_sq,naive_limit");
    assert_eq!(r1.len(), 5);
    for r in &r1 {
        let ub: f64 = r[1].parse().unwrap();
        let naive: f64 = r[2].parse().unwrap();
        assert!(ub > naive);
    }

    let (h2, r2) = csv_rows(&dir.path().join("fig2.csv"));
    assert_eq!(h2, "N,metric_naive,metric_unbiased,mode");
    assert_eq!(r2.len(), 20);
    for r in &r2 {
        assert!(r[1].parse::<f64>().unwrap() < r[2].parse::<f64>().unwrap());
        assert_eq!(r[3], "log10_fnp");
    }

    let (h4, r4) = csv_rows(&dir.path().join("fig4.csv"));
    assert_eq!(h4, "N,metric_naive,metric_unbiased,mode");
    let last = r4.last().unwrap();
    assert!(last[1].parse::<f64>().unwrap() < last[2].parse::<f64>().unwrap());

    let (h3, r3) = csv_rows(&dir.path().join("fig3.csv"));
    assert_eq!(h3, "N,reject_rate,reject_se,analytic_fpp");
    let analytic: Vec<f64> = r3.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(analytic.windows(2).all(|w| w[1] > w[0]));

    let (hc, rc) = csv_rows(&dir.path().join("appendixC.csv"));
    assert_eq!(hc, "parameter,value,sigma_ub_sq,naive_limit");
    assert_eq!(rc.len(), 25);

    for f in ["fig1.svg", "fig2.svg", "fig3.svg", "fig4.svg"] {
        assert!(fs::read_to_string(dir.path().join(f))
            .unwrap()
            .starts_with("<svg"));
    }
    assert!(json(&dir.path().join("fig1.json"))["rows"].is_array());
}

#[test]
fn analytic_figures_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["figures", "fig2", "--out", a.to_str().unwrap()]);
    ok(&["figures", "fig2", "--out", b.to_str().unwrap()]);
    assert_eq!(
        fs::read(a.join("fig2.csv")).unwrap(),
        fs::read(b.join("fig2.csv")).unwrap()
    );
}
