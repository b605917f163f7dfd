//! Closed-form test solutions `u = A phi(x) chi(t)` with a Gaussian bump
//! `phi(x) = exp(-sum (x_i - c_i)^2 / (2 w_i^2))` and `chi(t) = (t - tau)_+^3`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{lipschitz_modulus, SourceSpec};
use crate::error::{KfpError, Result};
use crate::geometry::{DomainBox, ModelStructure};
use crate::kernel::CoefficientModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedDoc {
    pub name: String,
    pub center: Vec<f64>,
    pub width: Vec<f64>,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub tau: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManufacturedSolution {
    pub name: String,
    pub center: Vec<f64>,
    pub width: Vec<f64>,
    pub amplitude: f64,
    pub tau: f64,
    pub t_end: f64,
}

impl ManufacturedSolution {
    pub fn new(name: impl Into<String>, center: Vec<f64>, width: Vec<f64>, amplitude: f64, tau: f64, t_end: f64) -> Result<Self> {
        if center.len() != width.len() {
            return Err(KfpError::Dimension { expected: center.len(), got: width.len() });
        }
        if width.iter().any(|w| !(*w > 0.0)) {
            return Err(KfpError::invalid("width", "must be positive"));
        }
        if !(t_end > tau) {
            return Err(KfpError::invalid("support", "need tau < T"));
        }
        Ok(Self { name: name.into(), center, width, amplitude, tau, t_end })
    }

    pub fn from_doc(s: &ModelStructure, d: &ManufacturedDoc) -> Result<Self> {
        if d.center.len() != s.dim() {
            return Err(KfpError::config(
                format!("sources.{}.center", d.name),
                format!("expected {} entries, got {}", s.dim(), d.center.len()),
            ));
        }
        Self::new(d.name.clone(), d.center.clone(), d.width.clone(), d.amplitude, d.tau, d.t_end)
            .map_err(|e| KfpError::config(format!("sources.{}", d.name), e.to_string()))
    }

    pub fn to_doc(&self) -> ManufacturedDoc {
        ManufacturedDoc {
            name: self.name.clone(),
            center: self.center.clone(),
            width: self.width.clone(),
            amplitude: self.amplitude,
            tau: self.tau,
            t_end: self.t_end,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// The same bump scaled by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { amplitude: self.amplitude * k, ..self.clone() }
    }

    fn phi(&self, x: &[f64]) -> f64 {
        let e: f64 = x
            .iter()
            .zip(&self.center)
            .zip(&self.width)
            .map(|((x, c), w)| (x - c) * (x - c) / (2.0 * w * w))
            .sum();
        (-e).exp()
    }

    fn chi(&self, t: f64) -> (f64, f64) {
        let d = t - self.tau;
        if d <= 0.0 {
            (0.0, 0.0)
        } else {
            (d * d * d, 3.0 * d * d)
        }
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        self.amplitude * self.phi(x) * self.chi(t).0
    }

    pub fn grad(&self, x: &[f64], t: f64) -> DVector<f64> {
        let f = self.value(x, t);
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| -(x[i] - self.center[i]) / self.width[i].powi(2) * f))
    }

    pub fn hessian(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let f = self.value(x, t);
        let z: Vec<f64> = (0..n).map(|i| (x[i] - self.center[i]) / self.width[i].powi(2)).collect();
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { 1.0 / self.width[i].powi(2) } else { 0.0 };
            (z[i] * z[j] - diag) * f
        })
    }

    pub fn dt(&self, x: &[f64], t: f64) -> f64 {
        self.amplitude * self.phi(x) * self.chi(t).1
    }

    /// `Y u = <Bx, grad u> - u_t`.
    pub fn yu(&self, s: &ModelStructure, x: &[f64], t: f64) -> f64 {
        let (c, dc) = self.chi(t);
        if dc == 0.0 {
            return 0.0;
        }
        let phi = self.amplitude * self.phi(x);
        let b = s.b();
        let n = self.dim();
        let mut drift = 0.0;
        for i in 0..n {
            let bx: f64 = (0..n).map(|k| b[(i, k)] * x[k]).sum();
            if bx != 0.0 {
                drift -= bx * (x[i] - self.center[i]) / self.width[i].powi(2);
            }
        }
        phi * (c * drift - dc)
    }

    /// `L u = sum a_ij(x,t) u_{x_i x_j} + Y u` with the full coefficients of `model`.
    pub fn lu(&self, model: &CoefficientModel, x: &[f64], t: f64) -> f64 {
        let c = self.chi(t).0;
        let yu = self.yu(model.structure(), x, t);
        if c == 0.0 {
            return yu;
        }
        let q = model.structure().q();
        let a = model.a(x, t);
        let f = self.amplitude * self.phi(x) * c;
        let mut tr = 0.0;
        for i in 0..q {
            let zi = (x[i] - self.center[i]) / self.width[i].powi(2);
            for j in 0..q {
                let zj = (x[j] - self.center[j]) / self.width[j].powi(2);
                let diag = if i == j { 1.0 / self.width[i].powi(2) } else { 0.0 };
                tr += a[(i, j)] * (zi * zj - diag);
            }
        }
        tr * f + yu
    }

    /// Box `c +- 8 w` times `[tau, T]`, where the modulus of derived sources is estimated.
    pub fn domain(&self) -> DomainBox {
        DomainBox {
            x: self.center.iter().zip(&self.width).map(|(c, w)| (c - 8.0 * w, c + 8.0 * w)).collect(),
            t: (self.tau, self.t_end),
        }
    }

    /// `L u` as a source, with an estimated Lipschitz-type modulus.
    pub fn source(&self, model: &CoefficientModel, seed: u64) -> Result<SourceSpec> {
        let s = model.structure();
        if s.dim() != self.dim() {
            return Err(KfpError::Dimension { expected: s.dim(), got: self.dim() });
        }
        let me = self.clone();
        let m = model.clone();
        let g: super::FieldFn = Arc::new(move |x, t| me.lu(&m, x, t));
        let w = lipschitz_modulus(s, &format!("lip(L {})", self.name), &g, &self.domain(), seed)?;
        SourceSpec::new(format!("L {}", self.name), s.dim(), g, w, self.tau, self.t_end, Vec::new())
    }

    /// `L_xbar u` of the coefficients frozen at `xbar`, as a source.
    pub fn frozen_source(&self, model: &CoefficientModel, xbar: &[f64], seed: u64) -> Result<SourceSpec> {
        let s = model.structure();
        let me = self.clone();
        let m = model.clone();
        let xb = xbar.to_vec();
        let g: super::FieldFn = Arc::new(move |x, t| frozen_residual(&m, &me, &xb, x, t));
        let w = lipschitz_modulus(s, &format!("lip(L_xbar {})", self.name), &g, &self.domain(), seed)?;
        SourceSpec::new(format!("L_xbar {}", self.name), s.dim(), g, w, self.tau, self.t_end, Vec::new())
    }
}

/// `L_xbar u(x,t) = L u(x,t) + sum (a_hk(xbar,t) - a_hk(x,t)) u_{x_h x_k}(x,t)`.
pub fn frozen_residual(model: &CoefficientModel, u: &ManufacturedSolution, xbar: &[f64], x: &[f64], t: f64) -> f64 {
    let q = model.structure().q();
    let h = u.hessian(x, t);
    let diff = model.a(xbar, t) - model.a(x, t);
    u.lu(model, x, t) + diff.component_mul(&h.view((0, 0), (q, q))).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_differences() {
        let u = ManufacturedSolution::new("b", vec![0.1, -0.2], vec![0.5, 0.7], 1.3, 0.0, 1.0).unwrap();
        let (x, t, h) = ([0.3, 0.1], 0.6, 1e-5);
        let g = u.grad(&x, t);
        let hs = u.hessian(&x, t);
        for i in 0..2 {
            let mut p = x;
            let mut m = x;
            p[i] += h;
            m[i] -= h;
            assert!(((u.value(&p, t) - u.value(&m, t)) / (2.0 * h) - g[i]).abs() < 1e-8);
            let fd = (u.grad(&p, t) - u.grad(&m, t)) / (2.0 * h);
            for j in 0..2 {
                assert!((fd[j] - hs[(j, i)]).abs() < 1e-8);
            }
        }
        assert!(((u.value(&x, t + h) - u.value(&x, t - h)) / (2.0 * h) - u.dt(&x, t)).abs() < 1e-8);
    }

    #[test]
    fn frozen_residual_at_xbar() {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        let p = CoefficientModel::sinusoidal_perturbation(&s, 0.1, 0).unwrap();
        let m = CoefficientModel::constant(s, DMatrix::from_element(1, 1, 1.0), 0.5).unwrap().with_perturbation(p);
        let u = ManufacturedSolution::new("b", vec![0.0, 0.0], vec![0.5, 0.5], 1.0, 0.0, 1.0).unwrap();
        let xb = [0.2, 0.3];
        assert_eq!(frozen_residual(&m, &u, &xb, &xb, 0.5), u.lu(&m, &xb, 0.5));
    }
}
