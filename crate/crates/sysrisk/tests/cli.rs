use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sysrisk::files::edges_csv;
use sysrisk::{ingest, EquitySource};

fn sysrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sysrisk"))
        .args(args)
        .env_remove("SYSRISK_THREADS")
        .env_remove("SYSRISK_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sysrisk(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn default_scenario_on_two_banks() {
    let dir = tempfile::tempdir().unwrap();
    let edges = write(dir.path(), "edges.csv", "lender,borrower,amount\n2,1,5\n");
    let sheets = write(dir.path(), "sheets.csv", "bank,equity\n1,50\n2,10\n");
    let out = dir.path().join("out");
    ok(&[
        "stress",
        "--edges",
        s(&edges),
        "--sheets",
        s(&sheets),
        "--valuation",
        "dr",
        "--lambda",
        "0.01",
        "--default-bank",
        "1",
        "--out-dir",
        s(&out),
    ]);
    let table = rows(&out.join("stress_h.csv"));
    let terminal: Vec<_> = table.iter().filter(|r| r["terminal"] == "true").collect();
    assert_eq!(terminal.len(), 2);
    let h = |shock: &str| -> f64 { terminal.iter().find(|r| r["shock"] == shock).unwrap()["h"].parse().unwrap() };
    assert!((h("default") - 1.0 / 12.0).abs() <= 1e-12);
    // bank 2 books 0.99 of its claim, losing 0.05 of its equity after the shock
    assert!((h("proportional") - 0.05 / 60.0).abs() <= 1e-12);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn damping_sweep_is_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "40", "--density", "0.15", "--seed", "6", "--out-dir", s(d)]);
    ok(&[
        "stress",
        "--edges",
        s(&d.join("edges.csv")),
        "--sheets",
        s(&d.join("sheets.csv")),
        "--valuation",
        "nldr",
        "--alpha",
        "0,1,2,5,10",
        "--out-dir",
        s(d),
    ]);
    let table = rows(&d.join("stress_h.csv"));
    let mut by_lambda: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in table.iter().filter(|r| r["terminal"] == "true") {
        by_lambda
            .entry(r["shock_value"].clone())
            .or_default()
            .push((r["parameter"].parse().unwrap(), r["h"].parse().unwrap()));
    }
    assert_eq!(by_lambda.len(), 3);
    for (lambda, mut hs) in by_lambda {
        assert_eq!(hs.len(), 5);
        hs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in hs.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12, "lambda {lambda}: {hs:?}");
        }
    }
}

#[test]
fn written_networks_read_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "30", "--seed", "2", "--out-dir", s(d)]);
    let source = EquitySource { sheets: Some(d.join("sheets.csv")), ..Default::default() };
    let first = ingest(&d.join("edges.csv"), &source).unwrap();
    let again = d.join("again.csv");
    edges_csv(&first.network).save(&again).unwrap();
    let second = ingest(&again, &source).unwrap();
    assert_eq!(first.network, second.network);
    assert_eq!(first.network.margins(), second.network.margins());
    assert_eq!(first.equity, second.equity);
    assert_eq!(fs::read(d.join("edges.csv")).unwrap(), fs::read(&again).unwrap());

    // sampled networks go through the same format
    ok(&["fit-null", "--edges", s(&d.join("edges.csv")), "--sheets", s(&d.join("sheets.csv")), "--out-dir", s(d)]);
    ok(&["sample", "--params", s(&d.join("params.json")), "--count", "2", "--seed", "3", "--out-dir", s(d)]);
    let sample = ingest(&d.join("sample_1.csv"), &EquitySource { slope: Some(1.0), ..Default::default() });
    assert!(sample.is_ok());
}

#[test]
fn synth_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        ok(&["synth", "--n", "50", "--seed", "9", "--out-dir", s(d)]);
    }
    for f in ["edges.csv", "sheets.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let edges = write(d, "edges.csv", "lender,borrower,amount\n2,1,5\n");
    let sheets = write(d, "sheets.csv", "bank,equity\n1,50\n2,10\n");
    let cfg = write(
        d,
        "job.json",
        &format!(
            r#"{{"edges": {:?}, "sheets": {:?}, "valuation": "furfine", "recovery": [0.4], "lambda": [0.2]}}"#,
            s(&edges),
            s(&sheets)
        ),
    );
    ok(&["stress", "--config", s(&cfg), "--recovery", "0.0", "--out-dir", s(d)]);
    let table = rows(&d.join("stress_h.csv"));
    assert!(table.iter().all(|r| r["valuation"] == "furfine" && r["parameter"] == "0" && r["shock_value"] == "0.2"));
    let bad = write(d, "bad.json", r#"{"lamda": [0.2]}"#);
    assert_eq!(sysrisk(&["stress", "--config", s(&bad)]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(sysrisk(&[]).status.code(), Some(2));
    assert_eq!(sysrisk(&["stress", "--valuation", "nope"]).status.code(), Some(2));
    assert_eq!(sysrisk(&["stress", "--lambda", "0.1"]).status.code(), Some(2));

    let sheets = write(d, "sheets.csv", "bank,equity\nA,10\nB,10\n");
    let missing = d.join("missing.csv");
    let code = sysrisk(&["stress", "--edges", s(&missing), "--sheets", s(&sheets), "--out-dir", s(d)]).status.code();
    assert_eq!(code, Some(3));

    let looped = write(d, "loop.csv", "lender,borrower,amount\nA,B,1\nB,B,2\n");
    let out = sysrisk(&["stress", "--edges", s(&looped), "--sheets", s(&sheets), "--out-dir", s(d)]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("loop.csv:3:") && err.contains("self-loop"), "{err}");

    let ring = write(d, "ring.csv", "lender,borrower,amount\nA,B,30\nB,A,30\n");
    let out = sysrisk(&[
        "stress",
        "--edges",
        s(&ring),
        "--sheets",
        s(&sheets),
        "--valuation",
        "dr",
        "--lambda",
        "0.1",
        "--max-rounds",
        "1",
        "--out-dir",
        s(d),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(rows(&d.join("stress_h.csv")).iter().any(|r| r["converged"] == "false"));
}

#[test]
fn rerun_replays_and_checks_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (synth, fitted) = (dir.path().join("synth"), dir.path().join("fit"));
    ok(&["synth", "--n", "20", "--out-dir", s(&synth)]);
    let out = ok(&["rerun", s(&synth.join("manifest.json")), "--out-dir", s(&dir.path().join("replay"))]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout.lines().all(|l| l.starts_with("identical")), "{stdout}");

    let (edges, sheets) = (synth.join("edges.csv"), synth.join("sheets.csv"));
    ok(&["fit-null", "--edges", s(&edges), "--sheets", s(&sheets), "--out-dir", s(&fitted)]);
    let text = fs::read_to_string(&sheets).unwrap();
    fs::write(&sheets, text.replacen('\n', "\n\n", 1)).unwrap();
    let out = sysrisk(&["rerun", s(&fitted.join("manifest.json"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}
