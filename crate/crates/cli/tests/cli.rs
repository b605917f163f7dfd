use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kfplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kfplab")).args(args).output().unwrap()
}

fn flagship() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/kolmogorov_1934.json")
}

fn light_config(dir: &Path, checks: &str, tolerances: &str) -> PathBuf {
    let text = format!(
        r#"{{
  "name": "light",
  "seed": 11,
  "structure": {{ "m": [1, 1] }},
  "coefficients": {{ "a0": {{ "constant": [[1.0]] }}, "nu": 0.5 }},
  "sources": [
    {{ "kind": "manufactured", "name": "u", "center": [0.0, 0.0], "width": [0.5, 0.5], "tau": 0.0, "T": 1.0 }}
  ],
  "domain": {{ "half_width": 1.0, "tau": 0.0, "T": 1.0 }},
  "tolerances": {tolerances},
  "checks": [{checks}]
}}"#
    );
    let p = dir.join("light.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn kernel_matches_heat_like_value_at_origin() {
    let cfg = flagship();
    let o = kfplab(&["--config", cfg.to_str().unwrap(), "kernel", "--eval", "0,0,1,0,0,0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // Gamma(0,1;0,0) = (4 pi)^{-1} det(C)^{-1/2}, det C = 1/12
    let expected = 12f64.sqrt() / (4.0 * std::f64::consts::PI);
    let g = stdout_json(&o)["gamma"].as_f64().unwrap();
    assert!((g - expected).abs() < 1e-12 * expected, "{g}");
}

#[test]
fn moduli_csv_has_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let o = kfplab(&[
        "moduli",
        "--modulus",
        r#"{"name":"h","kind":"power","alpha":0.5}"#,
        "--radii",
        "0.01,0.25",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("modulus,r,omega,M,N,U_mu,V_mu"));
    let row: Vec<f64> = lines.next().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    // omega = r^{1/2}: M = 5 omega, N = 25 omega
    assert!((row[2] - 5.0 * row[1]).abs() < 1e-8);
    assert!((row[3] - 25.0 * row[1]).abs() < 1e-7);
}

#[test]
fn structure_reports_exponents() {
    let o = kfplab(&["structure", "--m", "2,1", "--samples", "200"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["exponents"], serde_json::json!([1, 1, 3]));
    assert_eq!(v["hom_dim"], 5);
}

#[test]
fn hessian_of_manufactured_solution_matches() {
    let cfg = flagship();
    let o = kfplab(&["--config", cfg.to_str().unwrap(), "hessian", "--source", "bump_u", "--at", "0.1,0,1", "--ij", "0,0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let (got, exact) = (v["value"].as_f64().unwrap(), v["exact"].as_f64().unwrap());
    assert!((got - exact).abs() < 1e-3 * exact.abs());
}

#[test]
fn verify_writes_reports_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = light_config(dir.path(), r#""normalization", "chapman_kolmogorov", "lgamma_residual""#, "{}");
    let out = dir.path().join("reports");
    let o = kfplab(&["--config", cfg.to_str().unwrap(), "--threads", "2", "--out", out.to_str().unwrap(), "verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    for f in ["gamma_normalization.json", "chapman_kolmogorov.json", "lgamma_residual.json", "summary.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("lgamma_residual.json")).unwrap()).unwrap();
    assert_eq!(rep["build_info"]["threads"], 2);
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = light_config(dir.path(), r#""hessian_roundtrip""#, r#"{ "roundtrip": 1e-15 }"#);
    let out = dir.path().join("reports");
    let o = kfplab(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "verify"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name": "x", "seed": 1, "structure": {"m": [1, 1]}, "colour": 3}"#).unwrap();
    let o = kfplab(&["--config", bad.to_str().unwrap(), "verify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    assert_eq!(kfplab(&["kernel", "--eval", "0,0,1,0,0,0"]).status.code(), Some(2));
    assert_eq!(kfplab(&["--threads", "0", "structure", "--m", "1"]).status.code(), Some(2));
    assert_eq!(kfplab(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn seed_flag_changes_sampled_constants() {
    let a = stdout_json(&kfplab(&["--seed", "1", "structure", "--m", "1,1", "--samples", "200"]));
    let b = stdout_json(&kfplab(&["--seed", "1", "structure", "--m", "1,1", "--samples", "200"]));
    let c = stdout_json(&kfplab(&["--seed", "2", "structure", "--m", "1,1", "--samples", "200"]));
    assert_eq!(a, b);
    assert_ne!(a["kappa"], c["kappa"]);
}
