//! Explicit fundamental solution of the model operator with coefficients
//! depending on time only:
//!
//! `Gamma(x,t;y,s) = (4 pi)^{-N/2} det C(t,s)^{-1/2} exp(-1/4 <C^{-1} v, v>)`,
//! `v = x - E(t-s) y`, for `t > s`, and 0 otherwise.

mod checks;
mod coefficients;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{KfpError, Result};
use crate::geometry::ModelStructure;

pub use checks::{
    chapman_kolmogorov_check, gamma_normalization_check, gaussian_bound_check,
    gamma_normalization_integral, lgamma_residual_check, mean_value_check, separation_ok,
    BoundSampleSpec, QuadratureSpec, ResidualGridSpec,
};
pub use coefficients::{A0Doc, A0Spec, FieldMatrixFn, MatrixFn, CoefficientDoc, CoefficientModel, PerturbationDoc, SpatialPerturbation};

/// Highest total derivative order supported by [`gamma_derivatives`].
pub const DERIVATIVE_CEILING: usize = 4;

/// Covariance data for one pair `t > s`.
#[derive(Debug, Clone)]
pub struct KernelWorkspace {
    pub t: f64,
    pub s: f64,
    /// `t - s`, kept exactly.
    pub sigma: f64,
    pub c: DMatrix<f64>,
    pub c_inv: DMatrix<f64>,
    /// Lower Cholesky factor, `C = L L^T`.
    pub l: DMatrix<f64>,
    pub det_c: f64,
    /// `E(t - s)`.
    pub e_ts: DMatrix<f64>,
    /// `E(s - t)`.
    pub e_st: DMatrix<f64>,
    log_prefactor: f64,
}

impl KernelWorkspace {
    /// Builds the workspace for the lag `sigma = t - s` from a covariance
    /// matrix; fails unless `C` is SPD.
    pub fn from_covariance(s_: &ModelStructure, t: f64, sigma: f64, c: DMatrix<f64>) -> Result<Self> {
        let s = t - sigma;
        let n = c.nrows();
        let sym = 0.5 * (&c + c.transpose());
        let chol = Cholesky::<f64, Dyn>::new(sym.clone()).ok_or(KfpError::Indefinite { t, s })?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(KfpError::Indefinite { t, s });
        }
        let c_inv = chol.inverse();
        Ok(Self {
            t,
            s,
            sigma,
            c: sym,
            c_inv,
            l,
            det_c: log_det.exp(),
            e_ts: s_.exp_neg_tb(sigma),
            e_st: s_.exp_neg_tb(-sigma),
            log_prefactor: -0.5 * n as f64 * (4.0 * std::f64::consts::PI).ln() - 0.5 * log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    /// `v = x - E(t-s) y`.
    pub fn displacement(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x) - &self.e_ts * DVector::from_column_slice(y)
    }

    pub fn gamma_v(&self, v: &DVector<f64>) -> f64 {
        let q = v.dot(&(&self.c_inv * v));
        (self.log_prefactor - 0.25 * q).exp()
    }

    pub fn gamma(&self, x: &[f64], y: &[f64]) -> f64 {
        self.gamma_v(&self.displacement(x, y))
    }

    /// `y(xi) = E(s-t)(x - sqrt(2) L xi)`: pushes a standard normal onto the
    /// law with density `Gamma(x,t;.,s)`.
    pub fn whiten(&self, x: &[f64], xi: &[f64]) -> DVector<f64> {
        let v = std::f64::consts::SQRT_2 * (&self.l * DVector::from_column_slice(xi));
        &self.e_st * (DVector::from_column_slice(x) - v)
    }

    /// `D^{alpha1}_x D^{alpha2}_y Gamma` from the Gaussian pairing formula.
    pub fn derivative(&self, x: &[f64], y: &[f64], alpha1: &[usize], alpha2: &[usize]) -> Result<f64> {
        let n = self.dim();
        if alpha1.len() != n || alpha2.len() != n {
            return Err(KfpError::Dimension { expected: n, got: alpha1.len().min(alpha2.len()) });
        }
        let order: usize = alpha1.iter().chain(alpha2).sum();
        if order > DERIVATIVE_CEILING {
            return Err(KfpError::DerivativeOrder { order, ceiling: DERIVATIVE_CEILING });
        }
        let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(order);
        for (i, &a) in alpha1.iter().enumerate() {
            for _ in 0..a {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                dirs.push(e);
            }
        }
        for (j, &a) in alpha2.iter().enumerate() {
            for _ in 0..a {
                dirs.push(-self.e_ts.column(j).into_owned());
            }
        }
        let v = self.displacement(x, y);
        let g = -0.5 * (&self.c_inv * &v);
        let lin: Vec<f64> = dirs.iter().map(|d| g.dot(d)).collect();
        let quad: Vec<Vec<f64>> = dirs
            .iter()
            .map(|a| dirs.iter().map(|b| -0.5 * a.dot(&(&self.c_inv * b))).collect())
            .collect();
        let poly = pairing_sum(&lin, &quad, (1usize << order) - 1);
        Ok(poly * self.gamma_v(&v))
    }
}

/// Sum over partitions of the index set `mask` into singletons and pairs of
/// the products of `lin[i]` (singletons) and `quad[i][j]` (pairs).
fn pairing_sum(lin: &[f64], quad: &[Vec<f64>], mask: usize) -> f64 {
    if mask == 0 {
        return 1.0;
    }
    let a = mask.trailing_zeros() as usize;
    let rest = mask & !(1 << a);
    let mut total = lin[a] * pairing_sum(lin, quad, rest);
    let mut m = rest;
    while m != 0 {
        let b = m.trailing_zeros() as usize;
        m &= !(1 << b);
        total += quad[a][b] * pairing_sum(lin, quad, rest & !(1 << b));
    }
    total
}

/// `C(t,s) = int_s^t E(t-r) diag(A0(r), 0) E(t-r)^T dr`.
pub fn covariance(model: &CoefficientModel, t: f64, s: f64) -> Result<KernelWorkspace> {
    if !(t > s) {
        return Err(KfpError::TimeOrder { t, s });
    }
    covariance_lag(model, t, t - s)
}

/// Workspace for `(t, t - sigma)`, `sigma > 0`.
pub fn covariance_lag(model: &CoefficientModel, t: f64, sigma: f64) -> Result<KernelWorkspace> {
    if !(sigma > 0.0) {
        return Err(KfpError::TimeOrder { t, s: t - sigma });
    }
    let c = model.covariance_lag(t, sigma)?;
    KernelWorkspace::from_covariance(model.structure(), t, sigma, c)
}

/// `Gamma(x,t;y,s)`, zero for `t <= s`.
pub fn gamma(model: &CoefficientModel, x: &[f64], t: f64, y: &[f64], s: f64) -> Result<f64> {
    if t <= s {
        return Ok(0.0);
    }
    Ok(covariance(model, t, s)?.gamma(x, y))
}

/// `D^{alpha1}_x D^{alpha2}_y Gamma(x,t;y,s)` for `t > s`.
pub fn gamma_derivatives(
    model: &CoefficientModel,
    x: &[f64],
    t: f64,
    y: &[f64],
    s: f64,
    alpha1: &[usize],
    alpha2: &[usize],
) -> Result<f64> {
    covariance(model, t, s)?.derivative(x, y, alpha1, alpha2)
}

/// Weighted order `sum q_i (alpha1_i + alpha2_i)`.
pub fn weighted_order(s: &ModelStructure, alpha1: &[usize], alpha2: &[usize]) -> u32 {
    s.exponents()
        .iter()
        .zip(alpha1.iter().zip(alpha2))
        .map(|(&q, (&a, &b))| q * (a + b) as u32)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kolmogorov() -> CoefficientModel {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        CoefficientModel::constant(s, DMatrix::from_element(1, 1, 1.0), 1.0).unwrap()
    }

    #[test]
    fn kolmogorov_covariance_closed_form() {
        let m = kolmogorov();
        let tau: f64 = 0.7;
        let ws = covariance(&m, tau + 0.2, 0.2).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[tau, -tau * tau / 2.0, -tau * tau / 2.0, tau.powi(3) / 3.0]);
        assert!((&ws.c - &expect).norm() <= 1e-14 * expect.norm());
        assert!((ws.det_c - tau.powi(4) / 12.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_at_origin() {
        let m = kolmogorov();
        let t: f64 = 0.4;
        let g = gamma(&m, &[0.0, 0.0], t, &[0.0, 0.0], 0.0).unwrap();
        let expect = 3f64.sqrt() / (2.0 * std::f64::consts::PI * t * t);
        assert!((g - expect).abs() < 1e-13 * expect);
        assert_eq!(gamma(&m, &[0.0, 0.0], 0.0, &[0.0, 0.0], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn covariance_rejects_time_order() {
        assert!(matches!(covariance(&kolmogorov(), 0.0, 0.0), Err(KfpError::TimeOrder { .. })));
    }

    #[test]
    fn heat_first_derivative() {
        let s = ModelStructure::build(&[1], None).unwrap();
        let a = 0.6;
        let m = CoefficientModel::constant(s, DMatrix::from_element(1, 1, a), 0.5).unwrap();
        let (x, y, t) = (0.3, -0.2, 0.9);
        let g = gamma(&m, &[x], t, &[y], 0.0).unwrap();
        let d = gamma_derivatives(&m, &[x], t, &[y], 0.0, &[1], &[0]).unwrap();
        assert!((d + (x - y) / (2.0 * a * t) * g).abs() < 1e-14);
    }

    #[test]
    fn derivative_ceiling_enforced() {
        let m = kolmogorov();
        let r = gamma_derivatives(&m, &[0.0, 0.0], 1.0, &[0.0, 0.0], 0.0, &[3, 0], &[0, 2]);
        assert_eq!(r, Err(KfpError::DerivativeOrder { order: 5, ceiling: 4 }));
    }

    #[test]
    fn pairing_sum_counts_hermite_terms() {
        // fourth derivative along one direction: g^4 + 6 g^2 h + 3 h^2
        let (g, h) = (0.7, -0.3);
        let lin = vec![g; 4];
        let quad = vec![vec![h; 4]; 4];
        let v = pairing_sum(&lin, &quad, 0b1111);
        let expect = g.powi(4) + 6.0 * g * g * h + 3.0 * h * h;
        assert!((v - expect).abs() < 1e-15);
    }
}
