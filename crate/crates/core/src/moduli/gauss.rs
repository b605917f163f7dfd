//! Gaussian-averaged Dini integrals `U^mu` and `V^mu`.
//!
//! By Fubini, `U^mu(omega)(r) = int_0^inf omega(r rho)/rho G(rho) drho` with
//! `G(rho) = int_{||z|| > rho} exp(-mu |z|^2) dz`. In the coordinates
//! `w_i = |z_i|^{1/q_i}` the anisotropic norm is the plain sum `sum w_i`, so
//! `G` is a tail of a convolution of one-dimensional densities, computed by
//! nested adaptive quadrature and tabulated once per `(exponents, mu)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use statrs::function::erf::erfc;

use super::Modulus;
use crate::error::{KfpError, Result};
use crate::geometry::ModelStructure;
use crate::quadrature::{gauss_legendre, integrate};

const U_MIN: f64 = -60.0;
const PANEL: f64 = 0.5;
const PANEL_ORDER: usize = 20;

/// Tabulated `G(e^u)` on composite Gauss-Legendre nodes in `u = log rho`.
#[derive(Debug)]
pub struct GaussianTail {
    pub exponents: Vec<u32>,
    pub mu: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    /// `G(0) = (pi/mu)^{N/2}`.
    pub total: f64,
}

fn axis_mass(mu: f64) -> f64 {
    (PI / mu).sqrt()
}

/// Mass of `{|z|^{1/q} > x}` under `exp(-mu z^2)` on the line.
fn axis_tail(q: u32, mu: f64, x: f64) -> f64 {
    if x <= 0.0 {
        axis_mass(mu)
    } else {
        axis_mass(mu) * erfc(mu.sqrt() * x.powi(q as i32))
    }
}

/// Density of `w = |z|^{1/q}`: `2 q w^{q-1} exp(-mu w^{2q})`.
fn axis_density(q: u32, mu: f64, w: f64) -> f64 {
    let wq = w.powi(q as i32);
    2.0 * q as f64 * w.powi(q as i32 - 1) * (-mu * wq * wq).exp()
}

/// `G` for the trailing axes `exps`.
fn tail_mass(exps: &[u32], mu: f64, rho: f64) -> Result<f64> {
    let rest_total = axis_mass(mu).powi(exps.len() as i32 - 1);
    if rho <= 0.0 {
        return Ok(rest_total * axis_mass(mu));
    }
    if exps.len() == 1 {
        return Ok(axis_tail(exps[0], mu, rho));
    }
    let q = exps[0];
    let mut failed = None;
    let (conv, _) = integrate(
        |w| match tail_mass(&exps[1..], mu, rho - w) {
            Ok(g) => axis_density(q, mu, w) * g,
            Err(e) => {
                failed = Some(e);
                0.0
            }
        },
        0.0,
        rho,
        1e-17 * rest_total * axis_mass(mu),
        1e-12,
    )?;
    if let Some(e) = failed {
        return Err(e);
    }
    Ok(conv + axis_tail(q, mu, rho) * rest_total)
}

/// Shared tabulation of `G` for the given exponents and `mu`.
pub fn gaussian_tail(exponents: &[u32], mu: f64) -> Result<Arc<GaussianTail>> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(KfpError::invalid("mu", format!("must be > 0, got {mu}")));
    }
    type Key = (Vec<u32>, u64);
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<GaussianTail>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (exponents.to_vec(), mu.to_bits());
    if let Some(g) = cache.lock().unwrap().get(&key) {
        return Ok(g.clone());
    }
    let total = axis_mass(mu).powi(exponents.len() as i32);
    let mut rho_max: f64 = 1.0;
    while tail_mass(exponents, mu, rho_max)? > 1e-18 * total {
        rho_max *= 1.25;
    }
    let rule = gauss_legendre(PANEL_ORDER);
    let panels = ((rho_max.ln() - U_MIN) / PANEL).ceil() as usize;
    let mut nodes = Vec::with_capacity(panels * PANEL_ORDER);
    let mut weights = Vec::with_capacity(panels * PANEL_ORDER);
    for p in 0..panels {
        let a = U_MIN + p as f64 * PANEL;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            nodes.push(a + 0.5 * PANEL * (x + 1.0));
            weights.push(0.5 * PANEL * w);
        }
    }
    let values = nodes
        .par_iter()
        .map(|&u: &f64| tail_mass(exponents, mu, u.exp()))
        .collect::<Result<Vec<f64>>>()?;
    let g = Arc::new(GaussianTail {
        exponents: exponents.to_vec(),
        mu,
        nodes,
        weights,
        values,
        total,
    });
    cache.lock().unwrap().insert(key, g.clone());
    Ok(g)
}

/// `U^mu(omega)(r) = int exp(-mu|z|^2) int_0^{r||z||} omega(s)/s ds dz`.
pub fn u_mu_transform(w: &Modulus, mu: f64, r: f64, s: &ModelStructure) -> Result<f64> {
    if !(r > 0.0) {
        return Err(KfpError::invalid("r", format!("must be > 0, got {r}")));
    }
    if !w.dini()?.is_finite() {
        return Err(KfpError::Divergent);
    }
    let g = gaussian_tail(s.exponents(), mu)?;
    let mut acc = crate::quadrature::CompensatedSum::new();
    for ((u, wt), gv) in g.nodes.iter().zip(&g.weights).zip(&g.values) {
        acc.add(wt * w.eval(r * u.exp()) * gv);
    }
    // rho < e^{U_MIN}: G is at its maximum and Phi(x) ~ omega(x)/alpha
    acc.add(g.total * w.eval(r * U_MIN.exp()) / w.alpha());
    Ok(acc.value())
}

/// `V^mu(omega) = U^mu(M(omega))`.
pub fn v_mu_transform(w: &Modulus, mu: f64, r: f64, s: &ModelStructure) -> Result<f64> {
    u_mu_transform(&w.m_modulus()?, mu, r, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_tail_is_erfc() {
        let mu = 0.7;
        for rho in [0.0, 0.3, 1.1] {
            let g = tail_mass(&[1], mu, rho).unwrap();
            assert!((g - (PI / mu).sqrt() * erfc(mu.sqrt() * rho)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_axis_tail_at_zero_is_total_mass() {
        let g = tail_mass(&[1, 3], 1.0, 0.0).unwrap();
        assert!((g - PI).abs() < 1e-14);
        let small = tail_mass(&[1, 3], 1.0, 1e-9).unwrap();
        assert!((small - PI).abs() < 1e-6);
    }

    #[test]
    fn zero_modulus_gives_zero() {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        assert_eq!(u_mu_transform(&Modulus::zero(), 1.0, 0.5, &s).unwrap(), 0.0);
        assert!(u_mu_transform(&Modulus::zero(), -1.0, 0.5, &s).is_err());
    }
}
