use std::path::PathBuf;
use std::process::{Command, Output};

use numperturb::market_file::MarketFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_numperturb"))
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn numperturb")
}

#[test]
fn solve_passes_and_prints_csv() {
    let out = run(&["solve", "--spec", &data("t1_log.json"), "--eps-grid", "0,0.1,-0.1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("name,anchor,computed,reference,residual,pass"));
    assert!(text.contains("eps=0.1.conjugacy_gap,conjugate-duality,"));
    assert!(!text.contains(",false"));
}

#[test]
fn same_campaign_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("r{i}.json"))).collect();
    for f in &files {
        let out = run(&["expand", "--spec", &data("trinomial_mixture.json"), "--format", "json", "--out", f.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
    }
    let a = std::fs::read(&files[0]).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(&files[1]).unwrap());
}

#[test]
fn failing_check_gives_nonzero_exit() {
    // an unreachable tolerance makes the residual checks fail
    let out = run(&["solve", "--spec", &data("t1_log.json"), "--eps-grid", "0.3", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains(",false"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL"));
}

#[test]
fn errors_are_reported_with_distinct_status() {
    let out = run(&["solve", "--spec", "/nonexistent/market.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/market.json"));
    let out = run(&["counterexample", "unbounded-jumps", "--n-max", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("increase n_max"));
}

#[test]
fn spec_without_utility_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = MarketFile::load(std::path::Path::new(&data("t1_log.json"))).unwrap();
    file.utility = None;
    let p = dir.path().join("m.json");
    file.save(&p).unwrap();
    let out = run(&["risk-tolerance", "--spec", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no utility"));
}

#[test]
fn counterexamples_and_risk_tolerance() {
    let out = run(&["counterexample", "unbounded-jumps", "--eps-grid", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("numeraire[eps=0.5],bounded-jumps-counterexample,-2.5000000000000000e-1,"));
    let out = run(&["counterexample", "integrability", "--depths", "4,6"]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&["risk-tolerance", "--spec", &data("asymmetric_power.json")]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn strategy_and_verify_all_pass() {
    let out = run(&["strategy", "--spec", &data("t1_log.json"), "--dx-grid", "0.0625,0.03125", "--eps-grid", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = run(&["verify-all"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
