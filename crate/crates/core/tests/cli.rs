use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use submult::asm::AsmReport;
use submult::cli::verify::VerifyReport;
use submult::constructions::QSetReport;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_submult"))
        .args(args)
        .env_remove("SUBMULT_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn measure_q8_is_exact_quarter() {
    let o = run(&["measure", "--builtin", "q8", "--deterministic"]);
    assert_eq!(code(&o), 0);
    let r: AsmReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r.epsilon_star.exact().unwrap().to_string(), "1/4");
    assert!(r.exact);
    assert!(!r.lower_bound);
    assert!(r.generated_at.is_none());
}

#[test]
fn measure_cyclic_is_zero() {
    let o = run(&["measure", "--builtin", "cyclic", "--p", "5", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines[0], "quantity,epsilon_star,decimal,exact,lower_bound,mode,pairs");
    assert!(lines[1].starts_with("asm,0"));
    assert!(lines[1].ends_with("exhaustive,25"));
}

#[test]
fn measure_tadpole_within_bound() {
    let o = run(&[
        "measure", "--builtin", "tadpole", "--p", "3", "--pairs", "10000", "--seed", "7",
        "--assert-le", "0.0555556",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: AsmReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(r.lower_bound);
    assert!(r.generated_at.is_some());
}

#[test]
fn measure_assertion_violation_exits_2_and_still_prints() {
    let o = run(&["measure", "--builtin", "q8", "--assert-le", "0.2", "--format", "human"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("1/4"));
    assert!(stderr(&o).contains("assertion failed"));
}

#[test]
fn measure_usage_errors_exit_1() {
    assert_eq!(code(&run(&["measure"])), 1);
    assert_eq!(code(&run(&["measure", "--builtin", "nope"])), 1);
    assert_eq!(code(&run(&["measure", "--group", "/nonexistent/file.json"])), 1);
    assert_eq!(code(&run(&["measure", "--builtin", "miller-moreno", "--q", "11"])), 1);
    assert_eq!(code(&run(&["measure", "--builtin", "sr", "--r", "1.5"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let bad = path(dir.path(), "bad.json");
    fs::write(&bad, "{\"generators\": 3}").unwrap();
    assert_eq!(code(&run(&["measure", "--group", &bad])), 1);
}

#[test]
fn workers_flag_and_env() {
    let o = Command::new(env!("CARGO_BIN_EXE_submult"))
        .args(["measure", "--builtin", "q8"])
        .env("SUBMULT_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_submult"))
        .args(["measure", "--builtin", "q8", "--deterministic"])
        .env("SUBMULT_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(o.stdout, run(&["measure", "--builtin", "q8", "--deterministic", "--workers", "1"]).stdout);
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["verify", "--help"])), 0);
}

#[test]
fn deterministic_runs_are_byte_identical() {
    for args in [
        &["measure", "--builtin", "tadpole", "--p", "5", "--pairs", "2000", "--seed", "3", "--deterministic"][..],
        &["measure", "--builtin", "sr", "--r", "0.9", "--pairs", "1000", "--seed", "4", "--deterministic"][..],
        &["measure", "--builtin", "miller-moreno", "--pairs", "300", "--seed", "5", "--deterministic"][..],
        &["verify", "tadpole-bound", "--pairs", "1000", "--seed", "9", "--deterministic"][..],
        &["qset", "--p", "5", "--delta", "1/50"][..],
    ] {
        let a = run(args);
        let b = run(args);
        assert_eq!(code(&a), 0, "{args:?}: {}", stderr(&a));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
    let a = run(&["measure", "--builtin", "tadpole", "--pairs", "1500", "--seed", "8", "--deterministic", "--workers", "1"]);
    let b = run(&["measure", "--builtin", "tadpole", "--pairs", "1500", "--seed", "8", "--deterministic", "--workers", "4"]);
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["measure", "--builtin", "tadpole", "--pairs", "1500", "--seed", "9", "--deterministic"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn reports_round_trip() {
    let o = run(&["measure", "--builtin", "tadpole", "--pairs", "500", "--deterministic"]);
    let text = stdout(&o);
    let r: AsmReport = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&r).unwrap() + "\n", text);

    let o = run(&["verify", "conversions", "--samples", "1000"]);
    let text = stdout(&o);
    let v: VerifyReport = serde_json::from_str(&text).unwrap();
    assert!(v.passed);
    assert!(v.generated_at.is_some());
    assert_eq!(serde_json::to_string_pretty(&v).unwrap() + "\n", text);

    let o = run(&["qset", "--p", "3", "--delta", "1/100"]);
    let text = stdout(&o);
    let q: QSetReport = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&q).unwrap() + "\n", text);
}

#[test]
fn qset_examples() {
    let o = run(&["qset", "--p", "3", "--epsilon", "47/300"]);
    assert_eq!(code(&o), 0);
    let r: QSetReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r.delta_p, "1/100");
    assert_eq!(r.cutoff, "50");
    assert!(r.primes.contains(&3));
    assert!(r.primes.iter().all(|&q| q <= 50));
    assert!(r.complete);

    let o = run(&["qset", "--p", "5", "--delta", "1/50", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("q,member,witness_k\n"));
    assert_eq!(text.lines().last().unwrap().split(',').next().unwrap(), "23");

    // ε_p outside (0, 1/(2p))
    assert_eq!(code(&run(&["qset", "--p", "3", "--epsilon", "1/6"])), 1);
    assert_eq!(code(&run(&["qset", "--p", "3", "--epsilon", "-1/7"])), 1);
    assert_eq!(code(&run(&["qset", "--p", "3", "--epsilon", "abc"])), 1);
    assert_eq!(code(&run(&["qset", "--p", "3"])), 1);
}

#[test]
fn qset_tiny_delta_needs_q_max() {
    let o = run(&["qset", "--p", "3", "--delta", "1/1000000000"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--q-max"));
    let o = run(&["qset", "--p", "3", "--delta", "1/1000000000", "--q-max", "200"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
    let r: QSetReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(!r.complete);
    assert_eq!(r.scanned_up_to, 200);
}

#[test]
fn verify_suites_pass() {
    for args in [
        &["verify", "lemma-spectrum", "--p", "7", "--trials", "100"][..],
        &["verify", "tadpole-bound", "--p", "3", "--pairs", "10000"][..],
        &["verify", "sr-bound", "--r", "0.5", "--samples", "100000"][..],
        &["verify", "conversions"][..],
        &["verify", "tadpole-closure", "--p", "3"][..],
        &["verify", "mm-gap", "--p", "3", "--q", "151"][..],
    ] {
        let o = run(args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        let v: VerifyReport = serde_json::from_str(&stdout(&o)).unwrap();
        assert!(v.passed);
        assert!(v.counterexample.is_none());
    }
    let o = run(&["verify", "sr-bound", "--r", "0.5", "--samples", "1000", "--format", "human"]);
    assert!(stdout(&o).starts_with("sr-bound: PASS"));
    assert!(stdout(&o).contains("max_ratio"));
}

#[test]
fn verify_violation_exits_2_with_counterexample() {
    let o = run(&["verify", "lemma-spectrum", "--p", "5", "--trials", "4", "--tolerance", "0"]);
    assert_eq!(code(&o), 2);
    let v: VerifyReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(!v.passed);
    assert!(v.counterexample.is_some());
    let o = run(&["verify", "tadpole-bound", "--pairs", "2000", "--tolerance", "-0.01"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_config_errors_exit_1() {
    assert_eq!(code(&run(&["verify", "sr-bound", "--r", "1.5"])), 1);
    assert_eq!(code(&run(&["verify", "tadpole-closure", "--p", "5"])), 1);
    assert_eq!(code(&run(&["verify", "lemma-spectrum", "--p", "4"])), 1);
    assert_eq!(code(&run(&["verify", "no-such-suite"])), 1);
}

#[test]
fn plotdata_q8_has_three_sets() {
    let dir = tempfile::tempdir().unwrap();
    let report = path(dir.path(), "q8.json");
    assert_eq!(code(&run(&["measure", "--builtin", "q8", "--out", &report])), 0);
    let o = run(&["plotdata", &report]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "set_name,angle,exactness");
    let mut sets: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    sets.dedup();
    assert_eq!(sets, vec!["sigma_a", "sigma_b", "product_set"]);
}

#[test]
fn plotdata_case4_product_set_is_all_p2_roots() {
    let dir = tempfile::tempdir().unwrap();
    let pair = path(dir.path(), "pair.json");
    let report = path(dir.path(), "report.json");
    let csv = path(dir.path(), "points.csv");
    assert_eq!(code(&run(&["build", "case4", "--p", "5", "--k", "2", "--out", &pair])), 0);
    let o = run(&["measure", "--pair", &pair, "--out", &report]);
    assert_eq!(code(&o), 0);
    let r: AsmReport = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.epsilon_star.exact().unwrap().to_string(), "1/50");
    assert_eq!(code(&run(&["plotdata", &report, "--out", &csv])), 0);
    let text = fs::read_to_string(&csv).unwrap();
    let mut angles: Vec<f64> = text
        .lines()
        .filter(|l| l.starts_with("product_set,"))
        .map(|l| {
            assert!(l.ends_with(",exact"));
            l.split(',').nth(1).unwrap().parse().unwrap()
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    assert_eq!(angles.len(), 25);
    for (j, a) in angles.iter().enumerate() {
        assert!((a - j as f64 / 25.0).abs() < 1e-12);
    }
}

#[test]
fn plotdata_empty_and_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let report = path(dir.path(), "sr.json");
    assert_eq!(code(&run(&["measure", "--builtin", "sr", "--pairs", "100", "--out", &report])), 0);
    let o = run(&["plotdata", &report]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "set_name,angle,exactness\n");

    let bad = path(dir.path(), "bad.json");
    fs::write(&bad, "{\"epsilon_star\": 1}").unwrap();
    assert_eq!(code(&run(&["plotdata", &bad])), 1);
    assert_eq!(code(&run(&["plotdata", "/nonexistent.json"])), 1);
}

#[test]
fn build_then_measure_group_file() {
    let dir = tempfile::tempdir().unwrap();
    let doc = path(dir.path(), "q8.json");
    assert_eq!(code(&run(&["build", "q8", "--closure", "--out", &doc])), 0);
    let o = run(&["measure", "--group", &doc, "--format", "csv"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("asm,1/4,0.25,true"));

    let mm = path(dir.path(), "mm.json");
    assert_eq!(code(&run(&["build", "miller-moreno", "--q", "13", "--out", &mm])), 0);
    let o = run(&["measure", "--group", &mm, "--deterministic"]);
    let r: AsmReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(r.notes.iter().any(|n| n == "closure order 39"));

    for c in ["tadpole", "cyclic", "sr", "case4"] {
        let o = run(&["build", c]);
        assert_eq!(code(&o), 0, "{c}");
        let _: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    }
    assert_eq!(code(&run(&["build", "case4", "--k", "0"])), 1);
}

#[test]
fn closure_budget_is_a_config_error() {
    let o = run(&["measure", "--builtin", "miller-moreno", "--q", "151", "--max-elements", "100"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("max-elements"));
}
