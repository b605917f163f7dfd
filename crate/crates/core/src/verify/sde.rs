//! Monte-Carlo oracle for the fundamental solution: exponential Euler paths of
//!
//! `dX = -B X dt + sqrt(2) [A0(t)^{1/2}; 0] dW`,
//!
//! whose law at time `t` started from `y` at `s` is `N(E(t-s) y, 2 C(t,s))`,
//! i.e. the density `Gamma(., t; y, s)`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{KfpError, Result};
use crate::kernel::{covariance, CoefficientModel};
use crate::quadrature::CompensatedSum;
use crate::report::EstimateReport;
use crate::rng;

/// Equiprobable bins of the radial histogram.
const BINS: usize = 20;
/// Admissible L1 distance of the radial histogram.
pub const L1_TOLERANCE: f64 = 0.05;

/// Drift flows `E(h)`, `E(2h)` and per-step diffusion roots, row-major.
struct Stepper {
    n: usize,
    q: usize,
    e1: Vec<f64>,
    e2: Vec<f64>,
    /// `chol A0(s + k h)` for every fine step `k`.
    roots: Vec<Vec<f64>>,
    h: f64,
}

impl Stepper {
    fn new(model: &CoefficientModel, s: f64, t: f64, n_steps: usize) -> Result<Self> {
        let st = model.structure();
        let (n, q) = (st.dim(), st.q());
        let h = (t - s) / n_steps as f64;
        let flat = |m: nalgebra::DMatrix<f64>| -> Vec<f64> { (0..n * n).map(|k| m[(k / n, k % n)]).collect() };
        let (e1, e2) = (flat(st.exp_neg_tb(h)), flat(st.exp_neg_tb(2.0 * h)));
        let roots = (0..n_steps)
            .map(|k| {
                let time = s + k as f64 * h;
                let l = model.a0(time).cholesky().ok_or(KfpError::Indefinite { t: time, s: time })?.l();
                Ok((0..q * q).map(|k| l[(k / q, k % q)]).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self { n, q, e1, e2, roots, h })
    }

    /// `x <- E(dt) (x + sqrt(2) [A0^{1/2}; 0] dw)`: exact for the drift.
    fn step(&self, x: &mut [f64], k: usize, coarse: bool, dw: &[f64], buf: &mut [f64]) {
        let (n, q) = (self.n, self.q);
        let root = &self.roots[k];
        for i in 0..q {
            let noise: f64 = (0..q).map(|j| root[i * q + j] * dw[j]).sum();
            x[i] += std::f64::consts::SQRT_2 * noise;
        }
        let e = if coarse { &self.e2 } else { &self.e1 };
        for i in 0..n {
            buf[i] = e[i * n..(i + 1) * n].iter().zip(x.iter()).map(|(a, v)| a * v).sum();
        }
        x.copy_from_slice(buf);
    }

    /// Terminal states at `n_steps` and at `n_steps / 2` from the same
    /// Brownian increments.
    fn simulate(&self, y: &[f64], path: u64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut g = rng::stream(seed, "sde_paths", path);
        let mut fine = y.to_vec();
        let mut coarse = y.to_vec();
        let mut dw = vec![0.0; self.q];
        let mut dw_pair = vec![0.0; self.q];
        let mut bx = vec![0.0; self.n];
        let sh = self.h.sqrt();
        for k in 0..self.roots.len() {
            for w in dw.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut g);
                *w = sh * z;
            }
            self.step(&mut fine, k, false, &dw, &mut bx);
            for (p, w) in dw_pair.iter_mut().zip(&dw) {
                *p += w;
            }
            if k % 2 == 1 {
                self.step(&mut coarse, k - 1, true, &dw_pair, &mut bx);
                dw_pair.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        (fine, coarse)
    }
}

struct Moments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn moments(xs: &[Vec<f64>]) -> Moments {
    let n = xs[0].len();
    let m = xs.len() as f64;
    let mut sums: Vec<CompensatedSum> = (0..n).map(|_| CompensatedSum::new()).collect();
    for x in xs {
        for (acc, v) in sums.iter_mut().zip(x) {
            acc.add(*v);
        }
    }
    let mean = DVector::from_iterator(n, sums.iter().map(|a| a.value() / m));
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = CompensatedSum::new();
            for x in xs {
                acc.add((x[i] - mean[i]) * (x[j] - mean[j]));
            }
            cov[(i, j)] = acc.value() / (m - 1.0);
            cov[(j, i)] = cov[(i, j)];
        }
    }
    Moments { mean, cov }
}

/// Simulates `n_paths` paths and compares mean, covariance and the radial
/// histogram of the whitened end points with `Gamma(., t; y, s)`.
///
/// `c_star` is the largest of `z_max / 4`, `cov_rel / 0.05` and
/// `l1 / 0.05`, so the report passes when it is at most 1. Returns
/// `MonteCarlo` when the step-halving difference exceeds the bias budget
/// (`bias_mean` standard errors on the mean, `bias_cov` relative Frobenius
/// on the covariance).
#[allow(clippy::too_many_arguments)]
pub fn sde_density_oracle(
    model: &CoefficientModel,
    y: &[f64],
    s: f64,
    t: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    bias: (f64, f64),
) -> Result<EstimateReport> {
    let st = model.structure();
    let n = st.dim();
    if y.len() != n {
        return Err(KfpError::Dimension { expected: n, got: y.len() });
    }
    if !(t > s) {
        return Err(KfpError::TimeOrder { t, s });
    }
    if n_paths < 100 || n_steps < 2 || !n_steps.is_multiple_of(2) {
        return Err(KfpError::invalid("n_paths/n_steps", "need n_paths >= 100 and an even n_steps >= 2"));
    }
    let ws = covariance(model, t, s)?;
    let target_mean = &ws.e_ts * DVector::from_column_slice(y);
    let target_cov = &ws.c * 2.0;

    let stepper = Stepper::new(model, s, t, n_steps)?;
    let ends: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| stepper.simulate(y, p, seed))
        .collect();
    let (fine, coarse): (Vec<Vec<f64>>, Vec<Vec<f64>>) = ends.into_iter().unzip();
    let mf = moments(&fine);
    let mc = moments(&coarse);

    let se: Vec<f64> = (0..n).map(|i| (mf.cov[(i, i)] / n_paths as f64).sqrt()).collect();
    let z_max = (0..n).map(|i| (mf.mean[i] - target_mean[i]).abs() / se[i]).fold(0.0, f64::max);
    let cov_rel = (&mf.cov - &target_cov).norm() / target_cov.norm();
    let bias_mean = (0..n).map(|i| (mf.mean[i] - mc.mean[i]).abs() / se[i]).fold(0.0, f64::max);
    let bias_cov = (&mf.cov - &mc.cov).norm() / target_cov.norm();
    if bias_mean > bias.0 || bias_cov > bias.1 {
        return Err(KfpError::MonteCarlo(format!(
            "{n_steps} steps too few: step-halving changes the mean by {bias_mean:.3} standard errors and the covariance by {bias_cov:.3e}"
        )));
    }

    // radial histogram of |L^{-1}(X - m)|^2, chi-square with N degrees
    let l_inv = target_cov
        .clone()
        .cholesky()
        .ok_or(KfpError::Indefinite { t, s })?
        .l()
        .try_inverse()
        .ok_or(KfpError::Indefinite { t, s })?;
    let chi = ChiSquared::new(n as f64).map_err(|e| KfpError::MonteCarlo(e.to_string()))?;
    let edges: Vec<f64> = (1..BINS).map(|k| chi.inverse_cdf(k as f64 / BINS as f64)).collect();
    let mut counts = [0usize; BINS];
    for x in &fine {
        let z = &l_inv * (DVector::from_column_slice(x) - &target_mean);
        counts[edges.partition_point(|&e| e < z.norm_squared())] += 1;
    }
    let l1: f64 = counts.iter().map(|&c| (c as f64 / n_paths as f64 - 1.0 / BINS as f64).abs()).sum();

    let mut rep = EstimateReport::new("sde_density", "mean within 4 SE, covariance within 5% of 2C, radial L1 within 0.05")
        .with_samples(vec![z_max, cov_rel, l1], vec![4.0, 0.05, L1_TOLERANCE])
        .with_seed(seed)
        .with_grid_hash(&[s, t, n_paths as f64, n_steps as f64]);
    rep.c_star = (z_max / 4.0).max(cov_rel / 0.05).max(l1 / L1_TOLERANCE);
    rep.extra.insert("z_max".into(), z_max);
    rep.extra.insert("cov_rel".into(), cov_rel);
    rep.extra.insert("l1".into(), l1);
    rep.extra.insert("bias_mean_se".into(), bias_mean);
    rep.extra.insert("bias_cov".into(), bias_cov);
    rep.extra.insert("mean_error".into(), (&mf.mean - &target_mean).norm());
    for i in 0..n {
        rep.extra.insert(format!("mean_{i}"), mf.mean[i]);
    }
    Ok(rep.judge(1.0, f64::INFINITY))
}
