use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use sslvecm::io::{read_matrix, write_matrix, write_panel};
use sslvecm::simulation::{synthetic_prices, DgpSpec};
use sslvecm::SeriesPanel;

fn sslvecm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sslvecm")).args(args).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_zero_rank_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = sslvecm(&["simulate", "--p", "10", "--r", "0", "--T", "100", "--samples", "5", "--algorithm", "1", "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let res = json(&out.join("result.json"));
    let est = res["estimates"].as_array().unwrap();
    assert_eq!(est.len(), 5);
    assert!(est.iter().all(|e| e.as_f64() == Some(0.0)));
    for f in ["samples.csv", "paths.csv", "manifest.json", "timings.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = sslvecm(&["simulate", "--r", "0", "--T", "100", "--samples", "5", "--algorithm", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--p"));

    let o = sslvecm(&["simulate", "--p", "10", "--r", "10", "--T", "100", "--samples", "5", "--algorithm", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"lamda1": 2.0}"#).unwrap();
    let o = sslvecm(&["simulate", "--p", "5", "--r", "1", "--T", "50", "--samples", "1", "--algorithm", "1", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamda1"));

    assert_eq!(sslvecm(&["bogus"]).status.code(), Some(2));
    assert_eq!(sslvecm(&["--help"]).status.code(), Some(0));
}

#[test]
fn estimate_reproduces_the_simulated_rank() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = sslvecm(&["simulate", "--p", "8", "--r", "2", "--T", "150", "--samples", "2", "--algorithm", "1", "--seed", "3", "--write-panels", "--out", s(&sim)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let res = json(&sim.join("result.json"));
    for i in 0..2 {
        let est = dir.path().join(format!("est{i}"));
        let o = sslvecm(&["estimate", "--input", s(&sim.join(format!("sample_{i}.csv"))), "--out", s(&est)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let rank = json(&est.join("rank.json"));
        assert_eq!(rank["rank"], res["estimates"][i]);
        let r = read_matrix(&est.join("r_hat.csv")).unwrap();
        let pi = read_matrix(&est.join("pi_hat.csv")).unwrap();
        assert_eq!((r.shape(), pi.shape()), ((8, 8), (8, 8)));
        assert!(fs::read_to_string(est.join("path.csv")).unwrap().starts_with("iteration,phase"));
    }
}

#[test]
fn non_finite_cells_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "a,b\n1,2\n3,NaN\n4,5\n").unwrap();
    let o = sslvecm(&["estimate", "--input", s(&csv), "--out", s(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("read panel") && err.contains("row 1, column 1"), "{err}");
}

#[test]
fn constant_prices_have_zero_volatility() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    let panel = SeriesPanel::new(DMatrix::from_element(3, 20, 50.0), Some(vec!["A".into(), "B".into(), "C".into()]), None).unwrap();
    write_panel(&prices, &panel).unwrap();
    let pi = dir.path().join("pi.csv");
    write_matrix(&pi, &DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, -0.5])).unwrap();
    let out = dir.path().join("pf");
    let o = sslvecm(&["portfolio", "--prices", s(&prices), "--pi", s(&pi), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(&out.join("volatility.json"));
    assert_eq!(rep["portfolios"].as_array().unwrap().len(), 2);
    for row in rep["portfolios"].as_array().unwrap().iter().chain([&rep["equal_weight"]]) {
        assert_eq!(row["train_vol_pct"].as_f64(), Some(0.0));
        assert_eq!(row["test_vol_pct"].as_f64(), Some(0.0));
    }
    assert!(rep["index"].is_null());
    let top = fs::read_to_string(out.join("top_weights.csv")).unwrap();
    assert!(top.lines().nth(1).unwrap().starts_with("portfolio_1,1,"));
}

#[test]
fn mismatched_pi_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    write_panel(&prices, &SeriesPanel::from_values(DMatrix::from_element(3, 20, 1.0)).unwrap()).unwrap();
    let pi = dir.path().join("pi.csv");
    write_matrix(&pi, &DMatrix::identity(4, 4)).unwrap();
    let o = sslvecm(&["portfolio", "--prices", s(&prices), "--pi", s(&pi), "--out", s(&dir.path().join("pf"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("4x4") && err.contains("3 assets"), "{err}");
}

#[test]
fn inline_estimation_builds_unit_portfolios() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    let panel = synthetic_prices(&DgpSpec { p: 10, r: 2, sigma: 1.0, t: 250, seed: 4 }, 2.0, 500.0).unwrap();
    write_panel(&prices, &panel).unwrap();
    let index = dir.path().join("index.csv");
    let first: Vec<f64> = panel.series(0);
    let ix = SeriesPanel::new(DMatrix::from_row_slice(1, first.len(), &first), Some(vec!["idx".into()]), None).unwrap();
    write_panel(&index, &ix).unwrap();
    let out = dir.path().join("pf");
    let o = sslvecm(&["portfolio", "--prices", s(&prices), "--split", "200", "--index", s(&index), "--top-k", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let weights = fs::read_to_string(out.join("weights.csv")).unwrap();
    let rows: Vec<&str> = weights.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        let l1: f64 = row.split(',').skip(1).map(|x| x.parse::<f64>().unwrap().abs()).sum();
        assert!((l1 - 1.0).abs() < 1e-10);
    }
    let rep = json(&out.join("volatility.json"));
    assert_eq!(rep["split_index"], 200);
    assert!(rep["index"]["train_vol_pct"].as_f64().unwrap() > 0.0);
    assert_eq!(fs::read_to_string(out.join("values.csv")).unwrap().lines().count(), 251);
}

#[test]
fn adf_keeps_the_unit_root_of_the_walk_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/random_walk.csv");
    let out = dir.path().join("adf");
    let o = sslvecm(&["adf", "--input", s(&fixture), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(&out.join("adf.json"));
    assert_eq!(rep["series"][0]["levels"]["reject_unit_root"], false);
    assert_eq!(rep["retained"], serde_json::json!([0]));
    let o = sslvecm(&["adf", "--input", s(&fixture), "--lags", "two", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_refuses_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("walk.csv");
    fs::copy(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/random_walk.csv"), &csv).unwrap();
    let out = dir.path().join("a");
    assert!(sslvecm(&["adf", "--input", s(&csv), "--out", s(&out)]).status.success());
    let manifest = out.join("manifest.json");
    assert!(sslvecm(&["replay", s(&manifest), "--out", s(&dir.path().join("b"))]).status.success());
    fs::write(&csv, "walk\n1\n2\n").unwrap();
    let o = sslvecm(&["replay", s(&manifest), "--out", s(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("changed"));
}
