//! Executes the checks a scenario lists and writes their reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    hessian_roundtrip_check, interpolation_check, model_operator_checks, schauder_space_check, schauder_time_check,
    sde_density_oracle, singular_bounds_check, CheckId, Scenario,
};
use crate::error::{KfpError, Result};
use crate::kernel::{
    chapman_kolmogorov_check, gamma_normalization_check, gaussian_bound_check, lgamma_residual_check,
    BoundSampleSpec, QuadratureSpec, ResidualGridSpec,
};
use crate::moduli::{m_dini_check, m_growth_check};
use crate::report::EstimateReport;

/// A check that could not produce a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckFailure {
    pub check: CheckId,
    pub error: String,
}

/// Reports of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub scenario: String,
    pub seed: u64,
    pub reports: Vec<EstimateReport>,
    pub failures: Vec<CheckFailure>,
}

impl ReportBundle {
    pub fn pass(&self) -> bool {
        self.failures.is_empty() && self.reports.iter().all(|r| r.pass)
    }
}

fn center(sc: &Scenario) -> Vec<f64> {
    sc.domain.x.iter().map(|(a, b)| 0.5 * (a + b)).collect()
}

fn off_center(sc: &Scenario) -> Vec<f64> {
    let mut y = center(sc);
    let (a, b) = sc.domain.x[0];
    y[0] += 0.25 * (b - a);
    y
}

/// `|int Gamma(x,t;y,tau) dy - 1|` on a 5 x 5 grid of `x = c (1, .., 1)` and `t` in `(tau, T]`.
fn normalization(sc: &Scenario) -> Result<EstimateReport> {
    let model = sc.coefficients.without_perturbation();
    let (tau, t_end) = sc.domain.t;
    let spec = QuadratureSpec::default();
    let mid = center(sc);
    let mut devs = Vec::new();
    let mut parts = Vec::new();
    for k in 1..=5 {
        let t = tau + (t_end - tau) * k as f64 / 5.0;
        for j in 0..5 {
            let c = -1.0 + 0.5 * j as f64;
            let x: Vec<f64> = sc.domain.x.iter().zip(&mid).map(|((a, b), m)| m + 0.5 * c * (b - a)).collect();
            let r = gamma_normalization_check(&model, &x, t, tau, &spec)?;
            devs.push(r.c_star);
            parts.extend(x);
            parts.push(t);
        }
    }
    let mut rep = EstimateReport::new("gamma_normalization", "|int Gamma dy - 1|")
        .with_samples(devs.clone(), vec![1e-8; devs.len()])
        .with_seed(sc.seed)
        .with_grid_hash(&parts);
    rep.c_star = devs.iter().cloned().fold(0.0, f64::max);
    let mut rep = rep.judge(1e-8, f64::INFINITY);
    rep.tolerance = 1e-8;
    Ok(rep)
}

/// Reports of one check.
pub fn run_check(sc: &Scenario, id: CheckId) -> Result<Vec<EstimateReport>> {
    let (tau, t_end) = sc.domain.t;
    let time_only = sc.coefficients.without_perturbation();
    Ok(match id {
        CheckId::Normalization => vec![normalization(sc)?],
        CheckId::ChapmanKolmogorov => vec![chapman_kolmogorov_check(
            &time_only,
            &off_center(sc),
            t_end,
            0.5 * (tau + t_end),
            &center(sc),
            tau,
            &QuadratureSpec::default(),
        )?],
        CheckId::LgammaResidual => {
            let spec = ResidualGridSpec { seed: sc.seed, ..Default::default() };
            vec![lgamma_residual_check(&time_only, &center(sc), tau, &spec)?]
        }
        CheckId::GaussianBound => {
            let n = sc.structure.dim();
            let spec = BoundSampleSpec { seed: sc.seed, samples: 2000, ..Default::default() };
            let zero = vec![0; n];
            let mut second = vec![0; n];
            second[0] = 2;
            vec![
                gaussian_bound_check(&time_only, &zero, &zero, &spec)?,
                gaussian_bound_check(&time_only, &second, &zero, &spec)?,
            ]
        }
        CheckId::ModuliBank => {
            if sc.moduli.is_empty() {
                return Err(KfpError::config("moduli", "moduli_bank needs a non-empty bank"));
            }
            vec![m_growth_check(&sc.moduli)?, m_dini_check(&sc.moduli)?]
        }
        CheckId::HessianRoundtrip => vec![hessian_roundtrip_check(sc)?],
        CheckId::SingularBounds => singular_bounds_check(sc)?,
        CheckId::SchauderSpace => vec![schauder_space_check(sc)?],
        CheckId::SchauderTime => vec![schauder_time_check(sc)?],
        CheckId::ModelOperator => model_operator_checks(sc)?,
        CheckId::Interpolation => {
            let ext = sc.domain.x.iter().map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
            vec![interpolation_check(sc, &[0.05, 0.1, 0.2, 0.4], 0.25 * ext)?]
        }
        CheckId::SdeOracle => {
            let d = &sc.sde;
            let y = d.y.clone().unwrap_or_else(|| {
                let mut y = vec![0.0; sc.structure.dim()];
                y[0] = 1.0;
                y
            });
            vec![sde_density_oracle(
                &time_only,
                &y,
                d.s.unwrap_or(tau),
                d.t.unwrap_or(t_end),
                d.n_paths,
                d.n_steps,
                sc.seed,
                (d.bias_mean, d.bias_cov),
            )?]
        }
    })
}

/// Runs every listed check; errors of individual checks are collected.
pub fn run_scenario(sc: &Scenario) -> ReportBundle {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &id in &sc.checks {
        match run_check(sc, id) {
            Ok(r) => reports.extend(r),
            Err(e) => failures.push(CheckFailure { check: id, error: e.to_string() }),
        }
    }
    ReportBundle { scenario: sc.name.clone(), seed: sc.seed, reports, failures }
}

/// File stem for a report id.
pub fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn io(path: &Path, e: impl std::fmt::Display) -> KfpError {
    KfpError::Io(format!("{}: {e}", path.display()))
}

/// One JSON file per report with a `build_info` key, `summary.csv`,
/// `failures.json` when a check errored, and `plots/<id>.csv`.
pub fn report_write(bundle: &ReportBundle, out_dir: &Path, build_info: &serde_json::Value) -> Result<()> {
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| io(&plots, e))?;
    for rep in &bundle.reports {
        let stem = sanitize(&rep.inequality_id);
        let mut v = serde_json::to_value(rep).map_err(|e| KfpError::Io(e.to_string()))?;
        v["build_info"] = build_info.clone();
        let path = out_dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&v).map_err(|e| KfpError::Io(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;

        let path = plots.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
        w.write_record(["abscissa", "lhs", "rhs"]).map_err(|e| io(&path, e))?;
        for (k, l) in rep.lhs_samples.iter().enumerate() {
            let x = rep.abscissa.get(k).copied().unwrap_or(k as f64);
            let r = rep.rhs_samples.get(k).copied().unwrap_or(f64::NAN);
            w.write_record([x.to_string(), l.to_string(), r.to_string()]).map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))?;
    }
    let path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
    w.write_record(["inequality_id", "c_star", "stability", "pass"]).map_err(|e| io(&path, e))?;
    for rep in &bundle.reports {
        w.write_record([rep.inequality_id.clone(), rep.c_star.to_string(), rep.stability.to_string(), rep.pass.to_string()])
            .map_err(|e| io(&path, e))?;
    }
    w.flush().map_err(|e| io(&path, e))?;
    if !bundle.failures.is_empty() {
        let path = out_dir.join("failures.json");
        let text = serde_json::to_string_pretty(&bundle.failures).map_err(|e| KfpError::Io(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
