use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn hitgap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hitgap")).args(args).output().expect("binary runs")
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn poincare_uniform_interval() {
    let out = hitgap(&["poincare", "--potential", "uniform:r=0.5", "--grid-points", "4096", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let cp = v["results"]["poincare"]["c_p"].as_f64().unwrap();
    assert!((cp - 0.101321).abs() < 1e-5, "{cp}");
    assert_eq!(v["config"]["command"], "poincare");
    assert_eq!(v["config"]["grid_points"], 4096);
    assert!(v.get("timestamp_unix").is_none());
}

#[test]
fn timestamp_present_by_default() {
    let out = hitgap(&["measure", "--potential", "gaussian", "--grid-points", "256"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["timestamp_unix"].as_u64().is_some());
}

#[test]
fn chain_two_state_laplace() {
    let f = data("two_state.json");
    let out = hitgap(&["chain", "--file", &f, "--rho", "1.5", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let vals: Vec<f64> = v["results"]["laplace"]["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12, "{vals:?}");
    assert_eq!(v["config"]["rho"], 1.5);
}

#[test]
fn chain_validation_errors_exit_2() {
    for f in ["bad_row.json", "three_cycle.json"] {
        let out = hitgap(&["chain", "--file", &data(f)]);
        assert_eq!(out.status.code(), Some(2), "{f}");
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["error"], "validation");
    }
    let out = hitgap(&["chain", "--file", &data("missing.json")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_or_bad_flags_exit_2() {
    assert_eq!(hitgap(&["hitting", "--potential", "gaussian"]).status.code(), Some(2));
    assert_eq!(hitgap(&["poincare", "--potential", "nope:x=1"]).status.code(), Some(2));
    assert_eq!(hitgap(&["poincare", "--potential", "gaussian:sigma=-1"]).status.code(), Some(2));
    assert_eq!(hitgap(&["mc", "--potential", "gaussian", "--U", "1,-1"]).status.code(), Some(2));
    assert_eq!(hitgap(&["mc", "--potential", "gaussian", "--U", "-1,1", "--dt", "0.5"]).status.code(), Some(2));
    assert_eq!(hitgap(&["mc", "--potential", "gaussian", "--U", "-1,1", "--x0", "0"]).status.code(), Some(2));
    assert_eq!(hitgap(&["bogus"]).status.code(), Some(2));
}

#[test]
fn mc_is_deterministic_and_csv_has_schema() {
    let args = [
        "mc", "--potential", "gaussian:sigma=1", "--U", "-1,1", "--x0", "2", "--theta", "0.1", "--n-paths", "3000",
        "--seed", "7", "--no-timestamp",
    ];
    let a = hitgap(&args);
    let b = hitgap(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let mut csv_args = args.to_vec();
    csv_args.extend(["--format", "csv"]);
    let c = hitgap(&csv_args);
    let text = String::from_utf8(c.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("name,value,unit,status"));
    assert!(lines.all(|l| l.split(',').count() == 4));
}

#[test]
fn hitting_report_and_output_file() {
    let dir = std::env::temp_dir().join(format!("hitgap-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("hit.json");
    let p = path.display().to_string();
    let out = hitgap(&[
        "hitting", "--potential", "gaussian:sigma=1", "--U", "-1,1", "--theta", "0.1", "--no-timestamp", "--output", &p,
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let tu = v["results"]["theta_U"].as_f64().unwrap();
    let ts = v["results"]["critical_rate"].as_f64().unwrap();
    assert!(tu <= ts);
    assert_eq!(v["results"]["poly_moments"].as_array().unwrap().len(), 4);
    assert_eq!(v["config"]["output"], p.as_str());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_gaussian_passes() {
    let out = hitgap(&["verify", "--potential", "gaussian:sigma=1", "--no-timestamp", "--n-paths", "2000"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let ledger = v["results"]["ledger"].as_array().unwrap();
    assert!(ledger.len() >= 20);
    for e in ledger {
        let s = e["status"].as_str().unwrap();
        assert!(s == "pass" || s == "not_applicable", "{e}");
    }
    assert_eq!(v["results"]["any_fail"], false);
}

#[test]
fn verify_exits_3_on_fail() {
    // theta far above the guaranteed rate makes the Lyapunov entries fail.
    let out = hitgap(&["verify", "--potential", "gaussian:sigma=1", "--theta", "5", "--n-paths", "0", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out)["results"]["any_fail"], true);
}
