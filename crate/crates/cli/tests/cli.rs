use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fisher(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fisher"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SYMMETRIC: &str = r#"{"buyers": [
  {"budget": 1, "values": [1, 1], "utility": {"kind": "linear"}},
  {"budget": 1, "values": [1, 1], "utility": {"kind": "linear"}}
], "goods": [{}, {}]}"#;

#[test]
fn solve_symmetric_fisher() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "m.json", SYMMETRIC);
    let out = fisher(&["solve", "--model", "fisher", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(0));
    let eq: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for p in eq["prices"].as_array().unwrap() {
        assert!((p.as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn infeasible_sr_exits_2() {
    let dir = TempDir::new().unwrap();
    let input = write(
        dir.path(),
        "m.json",
        r#"{"buyers": [{"budget": 2, "values": [1], "utility": {"kind": "linear"}}],
            "goods": [{"spending_cap": 1}]}"#,
    );
    let out = fisher(&["solve", "--model", "sr", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sum of caps") && err.contains("sum of budgets"), "{err}");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(fisher(&["solve", "--model", "nope", "--input", "x.json"]).status.code(), Some(1));
    assert_eq!(fisher(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fisher(&["solve", "--model", "fisher", "--input", "/no/such/file.json"]).status.code(), Some(1));
}

#[test]
fn tampered_equilibrium_fails_check() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "m.json", SYMMETRIC);
    let eq_path = dir.path().join("eq.json");
    assert!(fisher(&["solve", "--model", "fisher", "--input", s(&input), "--out", s(&eq_path)])
        .status
        .success());
    let ok = fisher(&["check", "--model", "fisher", "--input", s(&input), "--equilibrium", s(&eq_path)]);
    assert_eq!(ok.status.code(), Some(0));

    let mut eq: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&eq_path).unwrap()).unwrap();
    eq["prices"][0] = serde_json::json!(1.5);
    let bad = write(dir.path(), "bad.json", &eq.to_string());
    let out = fisher(&["check", "--model", "fisher", "--input", s(&input), "--equilibrium", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn exactify_symmetric() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "m.json", SYMMETRIC);
    let out = fisher(&["exactify", "--model", "fisher", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(0));
    let exact: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(exact["prices"], serde_json::json!(["1/1", "1/1"]));
}

#[test]
fn nsw_report_on_gap() {
    let dir = TempDir::new().unwrap();
    let gap = dir.path().join("gap.json");
    let gen = fisher(&["gen", "--family", "gap", "--n", "3", "--f", "0.3333333333333333", "--v", "10000", "--out", s(&gap)]);
    assert_eq!(gen.status.code(), Some(0));
    let out = fisher(&["nsw-report", "--input", s(&gap)]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["gap_ratio"].as_f64().unwrap() - 1.31034157904975).abs() < 1e-6);
}

#[test]
fn gen_solve_check_round_trip() {
    let dir = TempDir::new().unwrap();
    let families: [&[&str]; 3] = [
        &["--family", "gap", "--n", "4", "--f", "0.5", "--v", "50"],
        &["--family", "srr", "--kappa", "4"],
        &["--family", "random", "--n", "3", "--m", "5", "--seed", "11"],
    ];
    for (k, fam) in families.iter().enumerate() {
        let inst = dir.path().join(format!("i{k}.json"));
        let eq = dir.path().join(format!("e{k}.json"));
        let mut args = vec!["gen"];
        args.extend_from_slice(fam);
        args.extend(["--out", s(&inst)]);
        assert_eq!(fisher(&args).status.code(), Some(0), "{fam:?}");
        let solved = fisher(&["solve", "--model", "sr", "--input", s(&inst), "--out", s(&eq)]);
        assert_eq!(solved.status.code(), Some(0), "{fam:?}");
        let checked = fisher(&["check", "--model", "sr", "--input", s(&inst), "--equilibrium", s(&eq)]);
        assert_eq!(checked.status.code(), Some(0), "{fam:?}");
        for cmd in ["nsw-round", "nsw-opt"] {
            assert_eq!(fisher(&[cmd, "--input", s(&inst)]).status.code(), Some(0), "{cmd} {fam:?}");
        }
    }
}

#[test]
fn output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("r.json");
    fisher(&["gen", "--family", "random", "--n", "3", "--m", "4", "--seed", "5", "--out", s(&inst)]);
    for args in [
        vec!["solve", "--model", "sr", "--input", s(&inst), "--seed", "3"],
        vec!["nsw-round", "--input", s(&inst), "--root-rule", "enumerate"],
        vec!["nsw-report", "--input", s(&inst)],
    ] {
        let a = fisher(&args);
        let b = fisher(&args);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}
