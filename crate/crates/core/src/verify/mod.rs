//! Scenario-driven verification: best constants of the continuity estimates
//! for solutions of `L u = g`, the round trip `T_ij(L u) = D^2 u`, and a
//! Monte-Carlo oracle for the fundamental solution.

mod fields;
mod run;
mod scenario;
mod schauder;
mod sde;
mod singular;

pub use fields::{axis, GridLevel, Table};
pub use run::{report_write, run_check, run_scenario, CheckFailure, ReportBundle};
pub use scenario::{CheckId, DomainDoc, GridSpec, Scenario, ScenarioDoc, SdeSpec, Tolerances};
pub use schauder::{interpolation_check, schauder_space_check, schauder_time_check};
pub use sde::{sde_density_oracle, L1_TOLERANCE};
pub use singular::{hessian_sweeps, model_operator_checks, singular_bounds_check, HessianSweep};

use crate::error::{KfpError, Result};
use crate::report::EstimateReport;
use crate::representation::{repr_field, ReprKind};

/// Points `center + k delta e_i`, `k = -1, 1`, plus the centre.
fn probe_points(sc: &Scenario) -> Vec<Vec<f64>> {
    let center: Vec<f64> = sc.domain.x.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let mut out = vec![center.clone()];
    for (i, (a, b)) in sc.domain.x.iter().enumerate() {
        for k in [-1.0, 1.0] {
            let mut p = center.clone();
            p[i] += 0.15 * k * (b - a);
            out.push(p);
        }
    }
    out
}

/// `T_ij(L u)` against `D^2 u` for every manufactured solution, at a few
/// interior points at the final time. Time-only coefficients use `L`
/// directly; otherwise each point `xbar` uses the coefficients frozen at
/// `xbar` and the source `L_xbar u`. `c_star` is the relative sup error.
pub fn hessian_roundtrip_check(sc: &Scenario) -> Result<EstimateReport> {
    if sc.solutions.is_empty() {
        return Err(KfpError::invalid("sources", "hessian_roundtrip needs a manufactured solution"));
    }
    let model = &sc.coefficients;
    let q = sc.structure.q();
    let frozen = !model.is_time_only();
    let tol = if frozen { sc.tolerances.frozen_roundtrip } else { sc.tolerances.roundtrip };
    let points = probe_points(sc);
    let mut lhs = Vec::new();
    let mut scale = 0.0f64;
    let mut err_est = 0.0f64;
    for (k, u) in sc.solutions.iter().enumerate() {
        let t = sc.domain.t.1.min(u.t_end);
        let seed = crate::rng::derive_seed(sc.seed, "roundtrip", k as u64);
        let mut per_point: Vec<Vec<f64>> = Vec::new();
        if frozen {
            for x in &points {
                let fm = model.frozen_at(x)?;
                let src = u.frozen_source(model, x, seed)?;
                let mut v = Vec::new();
                for i in 0..q {
                    for j in i..q {
                        let r = repr_field(&fm, &src, ReprKind::Hessian(i, j), &[(x.clone(), t)], &sc.repr)?;
                        err_est = err_est.max(r[0].error_estimate);
                        v.push(r[0].value);
                    }
                }
                per_point.push(v);
            }
        } else {
            let src = u.source(model, seed)?;
            let pts: Vec<(Vec<f64>, f64)> = points.iter().map(|x| (x.clone(), t)).collect();
            per_point = vec![Vec::new(); points.len()];
            for i in 0..q {
                for j in i..q {
                    let r = repr_field(model, &src, ReprKind::Hessian(i, j), &pts, &sc.repr)?;
                    for (p, v) in per_point.iter_mut().zip(&r) {
                        err_est = err_est.max(v.error_estimate);
                        p.push(v.value);
                    }
                }
            }
        }
        for (x, v) in points.iter().zip(&per_point) {
            let h = u.hessian(x, t);
            let mut e = 0.0f64;
            let mut m = 0;
            for i in 0..q {
                for j in i..q {
                    scale = scale.max(h[(i, j)].abs());
                    e = e.max((v[m] - h[(i, j)]).abs());
                    m += 1;
                }
            }
            lhs.push(e);
        }
    }
    if !(scale > 0.0) {
        return Err(KfpError::invalid("sources", "manufactured Hessians vanish at the probe points"));
    }
    let rel: Vec<f64> = lhs.iter().map(|e| e / scale).collect();
    let mut rep = EstimateReport::new(
        "hessian_roundtrip",
        if frozen { "|T_ij(L_xbar u)(xbar) - D^2 u(xbar)| / sup|D^2 u|" } else { "|T_ij(L u) - D^2 u| / sup|D^2 u|" },
    )
    .with_samples(rel.clone(), vec![tol; rel.len()])
    .with_seed(sc.seed)
    .with_extra("hessian_scale", scale)
    .with_extra("max_error_estimate", err_est)
    .with_extra("frozen", if frozen { 1.0 } else { 0.0 })
    .with_grid_hash(&points.concat());
    rep.c_star = rel.iter().cloned().fold(0.0, f64::max);
    let mut rep = rep.judge(tol, f64::INFINITY);
    rep.tolerance = tol;
    Ok(rep)
}
