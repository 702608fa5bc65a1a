use std::path::Path;
use std::process::{Command, Output};

fn mss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mss")).args(args).output().expect("spawn mss")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn simulate(out: &Path, threads: &str) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_mss"))
        .env("RAYON_NUM_THREADS", threads)
        .args(["simulate", "--mech", "grr,ss,oue,mss", "--k", "64", "--eps-grid", "1,2", "--n", "2000"])
        .args(["--trials", "3", "--seed", "7", "--moduli", "29,31,53", "--attack", "--out"])
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success());
    std::fs::read(out).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(mss(&["--help"]).status.code(), Some(0));
    assert_eq!(mss(&["--version"]).status.code(), Some(0));
    assert_eq!(mss(&["simulate"]).status.code(), Some(1));
    assert_eq!(mss(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn invalid_configuration_exits_one() {
    let out = mss(&["analytic", "--k", "64", "--eps", "1", "--moduli", "6,9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(mss(&["analytic", "--k", "64", "--eps", "-1", "--moduli", "29,31,53"]).status.code(), Some(1));
    assert_eq!(mss(&["attack", "--mech", "rappor", "--k", "8", "--eps", "1"]).status.code(), Some(1));
}

#[test]
fn io_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing").join("out.csv");
    let code = mss(&[
        "simulate", "--mech", "grr", "--k", "8", "--eps-grid", "1", "--n", "100", "--out",
        out.to_str().unwrap(),
    ])
    .status
    .code();
    assert_eq!(code, Some(3));
}

#[test]
fn moduli_prints_valid_set_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("moduli.json");
    let args = ["moduli", "--k", "100", "--eps", "1", "--trials", "200", "--ell-max", "6", "--cache", cache.to_str().unwrap()];
    let first = json(&mss(&args));
    let moduli: Vec<usize> = serde_json::from_value(first["moduli"].clone()).unwrap();
    assert!(mss::domain::validate_moduli(&moduli, 100).is_ok());
    assert!(first["kappa"].as_f64().unwrap() <= 10.0);
    assert!(first["analytic_mse"].as_f64().unwrap() > 0.0);
    assert!(first["bits"].as_f64().unwrap() > 0.0);
    assert!(cache.exists());
    let second = json(&mss(&args));
    assert_eq!(first, second);
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(&dir.path().join("a.csv"), "1");
    let b = simulate(&dir.path().join("b.csv"), "1");
    let c = simulate(&dir.path().join("c.csv"), "2");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a).unwrap();
    // header + 4 mechs x 2 eps x 3 trials
    assert_eq!(text.lines().count(), 1 + 24);
    assert!(text.starts_with("trial,mech,"));
}

#[test]
fn simulate_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, svg) = (dir.path().join("r.csv"), dir.path().join("r.svg"));
    let out = mss(&[
        "simulate", "--mech", "grr,ss", "--k", "16", "--eps-grid", "0.5:2.0:0.5", "--n", "500",
        "--out", csv.to_str().unwrap(), "--svg", svg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(svg).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("class=\"series\"").count(), 2);
}

#[test]
fn attack_reports_rates() {
    let v = json(&mss(&[
        "attack", "--mech", "mss", "--k", "64", "--eps", "2", "--n", "2000", "--trials", "5", "--moduli", "29,31,53",
    ]));
    let (emp, se) = (v["empirical"].as_f64().unwrap(), v["stderr"].as_f64().unwrap());
    let exact = v["analytic_exact"].as_f64().unwrap();
    let closed = v["analytic_upper"].as_f64().unwrap();
    assert!(closed <= exact);
    assert!((emp - exact).abs() <= 4.0 * se, "{emp} vs {exact} (se {se})");
    let oue = json(&mss(&["attack", "--mech", "oue", "--k", "16", "--eps", "1", "--n", "500"]));
    assert!(oue["analytic_exact"].is_null());
}

#[test]
fn analytic_json_lists_every_mechanism() {
    let v = json(&mss(&["analytic", "--k", "64", "--eps", "1", "--moduli", "29,31,53", "--json"]));
    let names: Vec<&str> = v["mechanisms"].as_array().unwrap().iter().map(|r| r["mech"].as_str().unwrap()).collect();
    assert_eq!(names, ["grr", "oue", "rappor", "ss", "mss"]);
    assert_eq!(v["moduli"], serde_json::json!([29, 31, 53]));
    let table = mss(&["analytic", "--k", "64", "--eps", "1", "--moduli", "29,31,53"]);
    assert!(table.status.success());
    assert_eq!(String::from_utf8_lossy(&table.stdout).lines().count(), 7);
}
