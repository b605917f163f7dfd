use std::path::Path;

use kfplab_core::verify::{run_check, CheckId, Scenario};
use kfplab_core::KfpError;

fn shipped(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap()
}

fn config_path(err: KfpError) -> String {
    match err {
        KfpError::Config { path, .. } => path,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn shipped_scenarios_load() {
    for name in ["kolmogorov_1934.json", "piecewise_switch.json", "kolmogorov_3d.json"] {
        let sc = Scenario::from_json(&shipped(name)).unwrap();
        assert!(!sc.checks.is_empty(), "{name}");
        let again = Scenario::from_doc(sc.doc().clone()).unwrap();
        assert_eq!(again.doc(), sc.doc());
    }
}

#[test]
fn unknown_field_reports_its_path() {
    let text = shipped("kolmogorov_1934.json").replace("\"half_width\"", "\"halfwidth\"");
    let path = config_path(Scenario::from_json(&text).unwrap_err());
    assert!(path.starts_with("domain"), "{path}");
}

#[test]
fn wrong_dimension_is_a_config_error() {
    let text = shipped("kolmogorov_1934.json").replace("\"center\": [0.0, 0.0]", "\"center\": [0.0]");
    let path = config_path(Scenario::from_json(&text).unwrap_err());
    assert!(path.starts_with("sources"), "{path}");
}

#[test]
fn empty_time_interval_is_rejected() {
    let text = shipped("kolmogorov_1934.json").replace("\"domain\": { \"half_width\": 1.0, \"tau\": 0.0, \"T\": 1.0 }", "\"domain\": { \"half_width\": 1.0, \"tau\": 1.0, \"T\": 1.0 }");
    assert!(matches!(Scenario::from_json(&text), Err(KfpError::Config { .. })));
}

#[test]
fn unknown_check_is_rejected() {
    let text = shipped("kolmogorov_1934.json").replace("\"sde_oracle\"", "\"sde_oracel\"");
    let path = config_path(Scenario::from_json(&text).unwrap_err());
    assert!(path.starts_with("checks"), "{path}");
}

#[test]
fn zero_solutions_give_zero_roundtrip_scale_error() {
    let sc = Scenario::from_json(&shipped("kolmogorov_1934.json")).unwrap().with_zero_solutions();
    assert!(run_check(&sc, CheckId::HessianRoundtrip).is_err());
}

#[test]
fn checks_are_reproducible() {
    let sc = Scenario::from_json(&shipped("kolmogorov_3d.json")).unwrap();
    let a = run_check(&sc, CheckId::LgammaResidual).unwrap();
    let b = run_check(&sc, CheckId::LgammaResidual).unwrap();
    assert_eq!(a, b);
}

#[test]
fn shipped_moduli_bank_passes_growth_and_dini_checks() {
    use kfplab_core::moduli::{m_dini_check, m_growth_check, ModulusDoc};
    let docs: Vec<ModulusDoc> = serde_json::from_str(&shipped("moduli_bank.json")).unwrap();
    let bank: Vec<kfplab_core::Modulus> = docs.iter().map(|d| kfplab_core::Modulus::from_doc(d).unwrap()).collect();
    assert!(bank.len() >= 5);
    assert!(m_growth_check(&bank).unwrap().pass);
    assert!(m_dini_check(&bank).unwrap().pass);
}
