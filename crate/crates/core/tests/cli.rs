use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairpath::synth::{two_gaussians, GaussianSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairpath"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

/// Writes a synthetic dataset and its schema into `dir`.
fn write_synthetic(dir: &Path, seed: u64, n: usize) -> (PathBuf, PathBuf) {
    let spec = GaussianSpec {
        n,
        ..Default::default()
    };
    let ds = two_gaussians(&spec, seed).unwrap();
    let mut text = String::from("id,x1,x2,grp,y\n");
    for i in 0..ds.n() {
        let x = ds.row(i);
        text += &format!(
            "p{i},{},{},{},{}\n",
            x[0],
            x[1],
            ds.groups()[i],
            ds.labels()[i]
        );
    }
    let data = dir.join("data.csv");
    std::fs::write(&data, text).unwrap();
    let schema = dir.join("data.schema");
    std::fs::write(&schema, "id = id\nx1 = feature\nx2 = feature\ngrp = group\ny = label\nlabel.1 = +1\nlabel.-1 = -1\ngroup.0 = 0\ngroup.1 = 1\n").unwrap();
    (data, schema)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_beyond_eps_max_has_zero_price_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = write_synthetic(dir.path(), 3, 40);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[
            "fit",
            "--data",
            s(&data),
            "--schema",
            s(&schema),
            "--eps",
            "2",
            "--eps-max-auto",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let first = std::fs::read(a.join("solution.json")).unwrap();
    assert_eq!(first, std::fs::read(b.join("solution.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["gamma"].as_f64(), Some(0.0));
    assert_eq!(v["mu"].as_array().unwrap().len(), 40);
}

#[test]
fn path_then_weights() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = write_synthetic(dir.path(), 5, 30);
    let out = dir.path().join("out");
    let o = run(&[
        "path",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let path: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("path.json")).unwrap()).unwrap();
    let breakpoints = path["breakpoints"].as_array().unwrap().len();
    let csv = std::fs::read_to_string(out.join("path_breakpoints.csv")).unwrap();
    // Header, the start row, then one row per breakpoint.
    assert_eq!(csv.lines().count(), breakpoints + 2);
    assert!(csv.lines().last().unwrap().contains("terminal"));
    let mu = std::fs::read_to_string(out.join("path_mu.csv")).unwrap();
    assert!(mu.lines().next().unwrap().starts_with("epsilon,p0,p1"));

    let o = run(&[
        "fit",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--eps",
        "0.5",
        "--eps-max-auto",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    let o = run(&[
        "weights",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--out",
        s(&out),
        "--variant",
        "continuous",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let weights = std::fs::read_to_string(out.join("weights.csv")).unwrap();
    assert_eq!(weights.lines().next().unwrap(), "id,m_i,w_i");
    let total: f64 = weights
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
    let header: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("weights.json")).unwrap()).unwrap();
    assert_eq!(header["utility"]["variant"], "continuous");
}

#[test]
fn uncorrelated_groups_give_a_single_terminal_row() {
    // Each group holds mirror-image points, so the group-feature covariance
    // vanishes and eps_max is zero.
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat.csv");
    std::fs::write(
        &data,
        "id,a,b,g,y\nr0,1,2,0,1\nr1,-1,-2,0,-1\nr2,0.5,-3,1,1\nr3,-0.5,3,1,-1\nr4,2,1,0,1\nr5,-2,-1,0,-1\n",
    )
    .unwrap();
    let schema = dir.path().join("flat.schema");
    std::fs::write(&schema, "id = id\na = feature\nb = feature\ng = group\ny = label\nlabel.1 = +1\nlabel.-1 = -1\ngroup.0 = 0\ngroup.1 = 1\n").unwrap();
    let o = run(&[
        "path",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("path_breakpoints.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{csv}");
    assert!(rows[1].contains("terminal"));
}

#[test]
fn enumerate_reports_the_cover_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pts.csv");
    std::fs::write(&data, "u,v\n0.1,0.2\n0.9,0.1\n0.4,0.8\n0.7,0.6\n0.2,0.5\n").unwrap();
    let o = run(&["enumerate", "--data", s(&data), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.contains("labelings: 22  cover formula: 22"),
        "{stdout}"
    );
    let labelings = std::fs::read_to_string(dir.path().join("labelings.csv")).unwrap();
    assert_eq!(labelings.lines().count(), 23);
    let w: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("witnesses.json")).unwrap()).unwrap();
    assert_eq!(w["witnesses"].as_array().unwrap().len(), 22);
}

#[test]
fn adult_schema_loads_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "fit",
        "--data",
        s(&data_dir().join("adult_500.csv")),
        "--schema",
        s(&data_dir().join("adult.schema")),
        "--eps",
        "0.01",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = write_synthetic(dir.path(), 8, 30);
    assert_eq!(run(&["fit", "--nope"]).status.code(), Some(2));
    let bad_c = run(&[
        "fit",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--eps",
        "0.1",
        "--C",
        "-1",
    ]);
    assert_eq!(bad_c.status.code(), Some(2));
    let missing = run(&[
        "fit",
        "--data",
        s(&dir.path().join("absent.csv")),
        "--schema",
        s(&schema),
        "--eps",
        "0.1",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    let out = dir.path().join("partial");
    let partial = run(&[
        "path",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--max-events",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(partial.status.code(), Some(4));
    let csv = std::fs::read_to_string(out.join("path_breakpoints.csv")).unwrap();
    assert!(csv.lines().last().unwrap().contains("incomplete"));
}
