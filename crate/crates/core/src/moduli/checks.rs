//! Best-constant checks for the growth, Dini and Gaussian-average bounds of
//! the transforms.

use super::{u_mu_transform, Modulus};
use crate::error::{KfpError, Result};
use crate::geometry::ModelStructure;
use crate::quadrature::HalfLine;
use crate::report::{dyadic_scales, max_ratio, relative_change, EstimateReport};

fn finite(h: HalfLine) -> Result<f64> {
    match h {
        HalfLine::Finite(v) => Ok(v),
        _ => Err(KfpError::Divergent),
    }
}

fn growth_samples(bank: &[Modulus], top: i32) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for w in bank {
        let norm = finite(w.dini()?)? + w.omega0();
        for j in 0..=top {
            let r = 2f64.powi(j);
            lhs.push(w.m(r)?);
            rhs.push(norm * r.powf(w.alpha()));
        }
    }
    Ok((lhs, rhs))
}

/// `M(omega)(r) <= c ([omega] + omega0) r^alpha` for `r >= 1`.
pub fn m_growth_check(bank: &[Modulus]) -> Result<EstimateReport> {
    let (l0, r0) = growth_samples(bank, 12)?;
    let (l1, r1) = growth_samples(bank, 16)?;
    let c0 = max_ratio(&l0, &r0);
    let c1 = max_ratio(&l1, &r1);
    let mut rep = EstimateReport::new("m_growth", "([omega]+omega0) r^alpha, r >= 1").with_samples(l1, r1);
    rep.c_star = c1;
    rep.stability = relative_change(c1, c0);
    Ok(rep.judge(f64::INFINITY, 0.1))
}

/// `[M(omega)] <= c (int_0^1 omega(s)/s (1+|log s|) ds + omega0)` over the
/// log-Dini members of the bank; the others are skipped.
pub fn m_dini_check(bank: &[Modulus]) -> Result<EstimateReport> {
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut skipped = 0usize;
    for w in bank {
        let ld = w.log_dini()?;
        if !ld.is_finite() {
            skipped += 1;
            continue;
        }
        let m = w.m_modulus()?;
        lhs.push(finite(m.dini()?)?);
        rhs.push(finite(w.dini()?)? + ld.value() + w.omega0());
    }
    let mut rep = EstimateReport::new("m_dini", "int omega/s (1+|log s|) + omega0")
        .with_samples(lhs.clone(), rhs.clone())
        .with_extra("skipped_not_log_dini", skipped as f64);
    rep.c_star = max_ratio(&lhs, &rhs);
    Ok(rep.judge(f64::INFINITY, 0.0))
}

fn u_grid(refined: bool) -> Vec<f64> {
    let step = if refined { 4 } else { 2 };
    let mut g: Vec<f64> = (1..=12 * step).map(|j| 2f64.powf(-(j as f64) / step as f64)).collect();
    g.reverse();
    let top = if refined { 13 } else { 7 };
    g.extend((0..top).map(|j| 10f64.powf(j as f64 / (top - 1) as f64)));
    g
}

fn u_fit(w: &Modulus, mu: f64, s: &ModelStructure, grid: &[f64]) -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
    let norm = finite(w.dini()?)? + w.omega0();
    let mut lhs = Vec::with_capacity(grid.len());
    let mut small = Vec::with_capacity(grid.len());
    for &r in grid {
        lhs.push(u_mu_transform(w, mu, r, s)?);
        small.push(if r < 1.0 { finite(w.phi(r.sqrt())?)? } else { 0.0 });
    }
    let rhs_at = |kappa: f64| -> Vec<f64> {
        grid.iter()
            .zip(&small)
            .map(|(&r, &p)| if r < 1.0 { p + norm * (-kappa / r).exp() } else { norm * r.powf(w.alpha()) })
            .collect()
    };
    let mut best = (f64::INFINITY, f64::NAN);
    for kappa in dyadic_scales(-8, 4) {
        let c = max_ratio(&lhs, &rhs_at(kappa));
        if c < best.0 {
            best = (c, kappa);
        }
    }
    let rhs = rhs_at(if best.1.is_nan() { 1.0 } else { best.1 });
    Ok((best.0, best.1, lhs, rhs))
}

/// Fits the smallest `(c, kappa)` in
/// `U(r) <= c (int_0^{sqrt r} omega/s + ([omega]+omega0) e^{-kappa/r})` on `(0,1)`
/// and `U(r) <= c r^alpha ([omega]+omega0)` on `[1,10]`.
pub fn u_mu_bounds_check(w: &Modulus, mu: f64, s: &ModelStructure) -> Result<EstimateReport> {
    let g0 = u_grid(false);
    let g1 = u_grid(true);
    let (c0, _, _, _) = u_fit(w, mu, s, &g0)?;
    let (c1, kappa, lhs, rhs) = u_fit(w, mu, s, &g1)?;
    let mut rep = EstimateReport::new("u_mu_bounds", "Dini piece + e^{-kappa/r} | r^alpha")
        .with_samples(lhs, rhs)
        .with_extra("kappa", if kappa.is_nan() { 0.0 } else { kappa })
        .with_extra("mu", mu)
        .with_grid_hash(&g1);
    rep.c_star = if rep.lhs_max == 0.0 { 0.0 } else { c1 };
    rep.stability = relative_change(rep.c_star, if rep.lhs_max == 0.0 { 0.0 } else { c0 });
    if !rep.c_star.is_finite() {
        return Err(KfpError::Infeasible(format!("no (c, kappa) fits U^mu for {}", w.name())));
    }
    Ok(rep.judge(f64::INFINITY, 0.1))
}
