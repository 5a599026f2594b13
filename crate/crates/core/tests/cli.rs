//! End-to-end runs of the binary: exit codes, report contents, byte-stable
//! output and the sweep CSV.

use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ellcert")).args(args).output().unwrap()
}

/// The JSON report on the first stdout line and the summary on the last.
fn report(out: &Output) -> (Value, String) {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    let json = serde_json::from_str(lines.next().unwrap()).unwrap();
    (json, lines.last().unwrap().to_string())
}

fn strip_timing(text: &str) -> String {
    let mut v: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    v["timing"] = Value::Null;
    v.to_string()
}

const ROOT23: [&str; 5] = ["--op", "sigma_root(2)", "--n", "3", "--sigma"];

#[test]
fn certify_root_of_sigma_two() {
    let out = run(&[&["certify"][..], &ROOT23, &["1.7320508075688772", "--samples", "2000"]].concat());
    assert_eq!(out.status.code(), Some(0));
    let (json, summary) = report(&out);
    let r = &json["results"];
    assert_eq!(r["kappa_sigma"], 1);
    assert_eq!(r["order"], 2);
    assert!((r["c_sigma"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(r["theta_empirical"].as_f64().unwrap() >= 0.05);
    assert!(summary.starts_with("CERTIFIED order=2 theta="));
    assert!(summary.ends_with("kappa=1 samples=2000 seed=42"));
    assert_eq!(json["schema_version"], "1");
    assert_eq!(json["config"]["subcommand"], "certify");
}

#[test]
fn certify_sum_is_isotropic() {
    let out = run(&["certify", "--op", "sum", "--n", "3", "--sigma", "6", "--order", "3", "--samples", "500"]);
    assert_eq!(out.status.code(), Some(0));
    let (json, _) = report(&out);
    let r = &json["results"];
    assert_eq!(r["fully_isotropic"], true);
    assert_eq!(r["kappa_sigma"], 0);
    assert!((r["theta_empirical"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn kappa_of_garding_cone() {
    let out = run(&["kappa", "--cone", "gamma(4)", "--n", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let (json, summary) = report(&out);
    assert_eq!(json["results"]["kappa"]["kappa"], 1);
    assert!(summary.starts_with("HOLDS"));
}

#[test]
fn reruns_are_byte_identical_apart_from_timing() {
    let args = [&ROOT23[..], &["1.5", "--samples", "1000", "--seed", "7"]].concat();
    let args = [&["certify"][..], &args].concat();
    let a = run(&args);
    let b = run(&args);
    let (ta, tb) = (String::from_utf8(a.stdout).unwrap(), String::from_utf8(b.stdout).unwrap());
    assert_eq!(strip_timing(&ta), strip_timing(&tb));
    assert_eq!(ta.lines().last(), tb.lines().last());
}

#[test]
fn sweep_csv() {
    let out = run(&[
        "sweep", "--op", "sigma_root(2)", "--n", "3", "--band", "1,2", "--levels", "5", "--samples", "300",
        "--format", "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "sigma,c_sigma,tau_hat,tau_converged,kappa_sigma,order,theta_empirical,violations"
    );
    let rows = &lines[1..6];
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 8);
        assert_eq!(cols[4], "1");
        assert_eq!(cols[5], "2");
        assert_eq!(cols[7], "0");
    }
    let first: f64 = rows[0].split(',').next().unwrap().parse().unwrap();
    let last: f64 = rows[4].split(',').next().unwrap().parse().unwrap();
    assert_eq!((first, last), (1.0, 2.0));
    assert!(lines[6].starts_with("CERTIFIED"));
}

#[test]
fn sum_sweep_is_isotropic_everywhere() {
    let out = run(&["sweep", "--op", "sum", "--n", "3", "--band", "1,2", "--levels", "3", "--samples", "100"]);
    assert_eq!(out.status.code(), Some(0));
    let (json, _) = report(&out);
    let rows = json["results"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["fully_isotropic"] == true));
}

#[test]
fn band_with_level_below_range_is_inconclusive() {
    let out = run(&["band-certify", "--op", "sigma_root(2)", "--n", "3", "--band", "0,2", "--samples", "100"]);
    assert_eq!(out.status.code(), Some(3));
    let (json, summary) = report(&out);
    assert!(summary.starts_with("INCONCLUSIVE"));
    let levels = json["results"]["certificate"]["levels"].as_array().unwrap();
    assert!(levels[0]["error"].is_string());
}

#[test]
fn usage_errors() {
    assert_eq!(run(&["certify", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    assert_eq!(run(&["certify", "--op", "sum", "--n", "3"]).status.code(), Some(1));
    assert_eq!(run(&["certify", "--op", "sigma(9)", "--n", "3", "--sigma", "1"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn transform_certify_normalized() {
    let out = run(&[
        "transform-certify", "--op", "sigma_root(2)", "--n", "3", "--sigma", "1", "--rho", "1", "--scale", "1",
        "--samples", "2000",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let (_, summary) = report(&out);
    assert!(summary.starts_with("CERTIFIED order=3"));

    let gated = run(&[
        "transform-certify", "--op", "sigma_root(2)", "--n", "3", "--sigma", "1", "--rho", "0", "--gate",
    ]);
    assert_eq!(gated.status.code(), Some(3));
    assert!(report(&gated).1.starts_with("NOT-APPLICABLE"));
}

#[test]
fn output_file_is_written_whole() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = run(&[
        "certify", "--op", "sum", "--n", "3", "--sigma", "6", "--samples", "200", "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let json: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["config"]["output"], path.to_str().unwrap());
    // only the report remains; no temporary siblings
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("CERTIFIED"));
}
