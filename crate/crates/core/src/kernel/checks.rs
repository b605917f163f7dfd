//! Numerical checks of the structural identities and bounds of `Gamma`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{covariance, weighted_order, CoefficientModel, KernelWorkspace};
use crate::error::{KfpError, Result};
use crate::geometry::{estimate_structural_constants, DomainBox, GroupPoint, ModelStructure};
use crate::quadrature::normal_grid;
use crate::report::{max_ratio, relative_change, two_level_fit, EstimateReport};
use crate::rng;

/// Tensor Gauss-Hermite settings. `order` is the starting order; adaptive
/// checks double it up to `max_order` until the relative change is below `tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub order: usize,
    pub max_order: usize,
    pub tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { order: 16, max_order: 96, tol: 1e-11 }
    }
}

/// Sampler for the pointwise kernel bounds: `tau = t - s` log-uniform in
/// `[tau_min, tau_max]`, `s` uniform in `[0, 1]`, `y` uniform in `[-1,1]^N`,
/// `x = E(tau) y + D0(sqrt tau) z` with `z ~ N(0, spread^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundSampleSpec {
    pub samples: usize,
    pub seed: u64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub spread: f64,
    /// Quasi-triangle constant for the separation filter; estimated when absent.
    pub kappa: Option<f64>,
}

impl Default for BoundSampleSpec {
    fn default() -> Self {
        Self { samples: 4000, seed: 1, tau_min: 1e-3, tau_max: 1.0, spread: 2.0, kappa: None }
    }
}

/// Evaluation points for the finite-difference residual of `L Gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResidualGridSpec {
    /// Coarsest step; the residual is evaluated at `h0 / 2^k`, `k = 0..=halvings`.
    pub h0: f64,
    pub halvings: usize,
    /// Explicit points `(x, t)`; when empty, `samples` points are drawn.
    pub points: Vec<(Vec<f64>, f64)>,
    pub samples: usize,
    pub seed: u64,
    /// Drawn points are `E(t-s) y + sqrt(2) L z`, `z` uniform in `[-x_half, x_half]^N`, `C = L L^T`.
    pub x_half: f64,
    /// Range of `t - s` for drawn points.
    pub dt_range: (f64, f64),
    /// Points need `t - s > exclusion_cells * h0`.
    pub exclusion_cells: f64,
}

impl Default for ResidualGridSpec {
    fn default() -> Self {
        Self {
            h0: 1e-2,
            halvings: 3,
            points: Vec::new(),
            samples: 64,
            seed: 1,
            x_half: 1.5,
            dt_range: (0.5, 2.0),
            exclusion_cells: 5.0,
        }
    }
}

fn mean_estimate<F>(dim: usize, order: usize, f: F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let grid = normal_grid(dim, order);
    let vals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| grid.weights[i] * f(grid.point(i)))
        .collect();
    let mut acc = crate::quadrature::CompensatedSum::new();
    for v in vals {
        acc.add(v);
    }
    acc.value()
}

/// `int Gamma(x,t;y,s) dy` through the change of variables `y = y(xi)` of
/// [`KernelWorkspace::whiten`], evaluating `Gamma J / phi` on a Gauss-Hermite grid.
pub fn gamma_normalization_integral(ws: &KernelWorkspace, x: &[f64], order: usize) -> f64 {
    let n = ws.dim();
    // |det dy/dxi| = 2^{N/2} det L, since det E = 1
    let log_jac = 0.5 * n as f64 * 2f64.ln() + ws.l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_norm = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    mean_estimate(n, order, |xi| {
        let y = ws.whiten(x, xi);
        let log_phi = log_norm - 0.5 * xi.iter().map(|v| v * v).sum::<f64>();
        ws.gamma(x, y.as_slice()) * (log_jac - log_phi).exp()
    })
}

/// `|int Gamma(x,t;y,s) dy - 1|`.
pub fn gamma_normalization_check(
    model: &CoefficientModel,
    x: &[f64],
    t: f64,
    s: f64,
    spec: &QuadratureSpec,
) -> Result<EstimateReport> {
    let ws = covariance(model, t, s)?;
    if x.len() != ws.dim() {
        return Err(KfpError::Dimension { expected: ws.dim(), got: x.len() });
    }
    let integral = gamma_normalization_integral(&ws, x, spec.order);
    if !integral.is_finite() {
        return Err(KfpError::Quadrature("non-finite normalization integral".into()));
    }
    let dev = (integral - 1.0).abs();
    let mut r = EstimateReport::new("gamma_normalization", "|int Gamma dy - 1|")
        .with_samples(vec![dev], vec![1.0])
        .with_extra("integral", integral)
        .with_extra("order", spec.order as f64)
        .with_grid_hash(&[t, s, spec.order as f64]);
    r.c_star = dev;
    r.tolerance = 1e-8;
    r.pass = dev <= 1e-8;
    Ok(r)
}

/// `int Gamma(x,t;z,r) Gamma(z,r;y,s) dz` against `Gamma(x,t;y,s)`. The
/// integral is taken on a Gauss-Hermite grid pushed through the Gaussian
/// whose precision is the sum of the two factors' precisions in `z`; the
/// integrand is divided by that density. The reported deviation is relative
/// to `Gamma(x,t;y,s)`.
pub fn chapman_kolmogorov_check(
    model: &CoefficientModel,
    x: &[f64],
    t: f64,
    r: f64,
    y: &[f64],
    s: f64,
    spec: &QuadratureSpec,
) -> Result<EstimateReport> {
    if !(s < r && r < t) {
        return Err(KfpError::invalid("r", format!("need s < r < t, got s={s}, r={r}, t={t}")));
    }
    let outer = covariance(model, t, r)?;
    let inner = covariance(model, r, s)?;
    let direct = covariance(model, t, s)?.gamma(x, y);
    let n = outer.dim();
    if x.len() != n || y.len() != n {
        return Err(KfpError::Dimension { expected: n, got: x.len().min(y.len()) });
    }
    let p1 = outer.e_ts.transpose() * &outer.c_inv * &outer.e_ts * 0.5;
    let p2 = &inner.c_inv * 0.5;
    let prec = &p1 + &p2;
    let rhs = outer.e_ts.transpose() * &outer.c_inv * DVector::from_column_slice(x) * 0.5
        + &p2 * (&inner.e_ts * DVector::from_column_slice(y));
    let chol = nalgebra::Cholesky::new(prec.clone()).ok_or(KfpError::Indefinite { t, s })?;
    let mean = chol.solve(&rhs);
    // z = mean + L^{-T} xi has precision L L^T
    let lt_inv = chol.l().transpose().try_inverse().ok_or(KfpError::Indefinite { t, s })?;
    let log_norm = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
        + chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let eval = |order: usize| {
        mean_estimate(n, order, |xi| {
            let xi = DVector::from_column_slice(xi);
            let z = &mean + &lt_inv * &xi;
            let log_phi = log_norm - 0.5 * xi.dot(&xi);
            outer.gamma(x, z.as_slice()) * inner.gamma(z.as_slice(), y) * (-log_phi).exp()
        })
    };
    let mut order = spec.order.max(2);
    let mut val = eval(order);
    let mut change = f64::INFINITY;
    while order * 2 <= spec.max_order {
        order *= 2;
        let next = eval(order);
        change = relative_change(next, val);
        val = next;
        if change <= spec.tol {
            break;
        }
    }
    if !val.is_finite() {
        return Err(KfpError::Quadrature("non-finite convolution integral".into()));
    }
    let abs_dev = (val - direct).abs();
    let dev = if direct > 0.0 { abs_dev / direct } else { abs_dev };
    let mut rep = EstimateReport::new("chapman_kolmogorov", "|int Gamma Gamma dz - Gamma| / Gamma")
        .with_samples(vec![dev], vec![1.0])
        .with_extra("convolution", val)
        .with_extra("direct", direct)
        .with_extra("abs_deviation", abs_dev)
        .with_extra("order", order as f64)
        .with_extra("last_change", change)
        .with_grid_hash(&[t, r, s, order as f64]);
    rep.c_star = dev;
    rep.tolerance = 1e-6;
    rep.pass = dev <= 1e-6;
    Ok(rep)
}

/// Relative residual `|L Gamma| / (|tr A D^2 Gamma| + |<Bx,grad Gamma>| + |d_t Gamma|)`
/// by central differences. The step is `h sigma_i` in `x_i`, with `sigma_i^2`
/// the variance `2 C_ii(t,s)`, and `h (t - s)` in `t`.
fn fd_residual(model: &CoefficientModel, x: &[f64], t: f64, y: &[f64], s: f64, h: f64) -> Result<f64> {
    let st = model.structure();
    let n = st.dim();
    let q = st.q();
    let g = |xx: &[f64], tt: f64| -> Result<f64> { Ok(covariance(model, tt, s)?.gamma(xx, y)) };
    let ws = covariance(model, t, s)?;
    let hx: Vec<f64> = (0..n).map(|i| h * (2.0 * ws.c[(i, i)]).sqrt()).collect();
    let ht = h * (t - s);
    let g0 = ws.gamma(x, y);
    let at = |d: &[(usize, f64)]| -> f64 {
        let mut p = x.to_vec();
        for &(i, v) in d {
            p[i] += v * hx[i];
        }
        ws.gamma(&p, y)
    };
    let a = model.a0(t);
    let mut diff = 0.0;
    for i in 0..q {
        for j in 0..q {
            let d2 = if i == j {
                (at(&[(i, 1.0)]) - 2.0 * g0 + at(&[(i, -1.0)])) / (hx[i] * hx[i])
            } else {
                (at(&[(i, 1.0), (j, 1.0)]) - at(&[(i, 1.0), (j, -1.0)]) - at(&[(i, -1.0), (j, 1.0)])
                    + at(&[(i, -1.0), (j, -1.0)]))
                    / (4.0 * hx[i] * hx[j])
            };
            diff += a[(i, j)] * d2;
        }
    }
    let bx = st.b() * DVector::from_column_slice(x);
    let mut drift = 0.0;
    for j in 0..n {
        if bx[j] != 0.0 {
            drift += bx[j] * (at(&[(j, 1.0)]) - at(&[(j, -1.0)])) / (2.0 * hx[j]);
        }
    }
    let dt = (g(x, t + ht)? - g(x, t - ht)?) / (2.0 * ht);
    let res = diff + drift - dt;
    let scale = diff.abs() + drift.abs() + dt.abs();
    Ok(if scale > 0.0 { res.abs() / scale } else { res.abs() })
}

/// Finite-difference residual of `L Gamma(.;y,s)` and its observed order over
/// successive halvings of the step.
pub fn lgamma_residual_check(
    model: &CoefficientModel,
    y: &[f64],
    s: f64,
    spec: &ResidualGridSpec,
) -> Result<EstimateReport> {
    let st = model.structure();
    let n = st.dim();
    if y.len() != n {
        return Err(KfpError::Dimension { expected: n, got: y.len() });
    }
    if !(spec.h0 > 0.0) || spec.halvings == 0 {
        return Err(KfpError::invalid("grid_spec", "need h0 > 0 and at least one halving"));
    }
    // the time stencil spans t +- h0 (t - s)
    let exclusion = spec.exclusion_cells * spec.h0;
    let switches = model.breakpoints();
    let near_switch = |t: f64| switches.iter().any(|&b| (t - b).abs() <= 2.0 * spec.h0 * (t - s));
    let near_pole = |t: f64| t - s <= exclusion;
    let mut points = Vec::new();
    if spec.points.is_empty() {
        let mut rng = rng::stream(spec.seed, "lgamma_residual", 0);
        let mut tries = 0usize;
        while points.len() < spec.samples && tries < 1000 * spec.samples.max(1) {
            tries += 1;
            let t = s + rng.random_range(spec.dt_range.0..spec.dt_range.1);
            let z = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-spec.x_half..spec.x_half)));
            if near_pole(t) || near_switch(t) {
                continue;
            }
            let ws = covariance(model, t, s)?;
            let x = &ws.e_ts * DVector::from_column_slice(y) + &ws.l * z * std::f64::consts::SQRT_2;
            points.push((x.as_slice().to_vec(), t));
        }
        if points.is_empty() {
            return Err(KfpError::Grid("no admissible residual point away from the pole".into()));
        }
    } else {
        for (x, t) in &spec.points {
            if x.len() != n {
                return Err(KfpError::Dimension { expected: n, got: x.len() });
            }
            if near_pole(*t) {
                return Err(KfpError::Grid(format!("point ({x:?}, {t}) has t - s within {exclusion} of the pole")));
            }
            if !near_switch(*t) {
                points.push((x.clone(), *t));
            }
        }
        if points.is_empty() {
            return Err(KfpError::Grid("every residual point lies at a switch time".into()));
        }
    }
    let steps: Vec<f64> = (0..=spec.halvings).map(|k| spec.h0 / 2f64.powi(k as i32)).collect();
    let mut maxima = Vec::with_capacity(steps.len());
    let mut finest = Vec::new();
    for &h in &steps {
        let res: Vec<f64> = points
            .par_iter()
            .map(|(x, t)| fd_residual(model, x, *t, y, s, h))
            .collect::<Result<_>>()?;
        maxima.push(res.iter().cloned().fold(0.0, f64::max));
        finest = res;
    }
    let order = maxima
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .fold(f64::INFINITY, f64::min);
    let rhs = vec![1.0; finest.len()];
    let mut parts: Vec<f64> = steps.clone();
    for (x, t) in &points {
        parts.extend(x);
        parts.push(*t);
    }
    let mut rep = EstimateReport::new("lgamma_residual", "relative FD residual of L Gamma")
        .with_samples(finest, rhs)
        .with_seed(spec.seed)
        .with_extra("observed_order", order)
        .with_extra("exclusion_radius", exclusion)
        .with_grid_hash(&parts);
    for (k, m) in maxima.iter().enumerate() {
        rep = rep.with_extra(&format!("max_residual_h{k}"), *m);
    }
    rep.c_star = *maxima.last().unwrap();
    rep.tolerance = 1.9;
    rep.pass = order.is_finite() && order >= 1.9;
    Ok(rep)
}

struct BoundSample {
    x: Vec<f64>,
    t: f64,
    y: Vec<f64>,
    s: f64,
}

fn draw_bound_sample(st: &ModelStructure, spec: &BoundSampleSpec, label: &str, i: u64) -> BoundSample {
    let n = st.dim();
    let mut rng = rng::stream(spec.seed, label, i);
    let tau = (spec.tau_min.ln() + rng.random::<f64>() * (spec.tau_max / spec.tau_min).ln()).exp();
    let s = rng.random::<f64>();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z = DVector::from_iterator(n, (0..n).map(|_| spec.spread * rng.sample::<f64, _>(StandardNormal)));
    let mean = st.exp_neg_tb(tau) * DVector::from_column_slice(&y);
    let x = mean + st.d0(tau.sqrt()) * z;
    BoundSample { x: x.as_slice().to_vec(), t: s + tau, y, s }
}

fn validate_spec(spec: &BoundSampleSpec) -> Result<()> {
    if spec.samples == 0 {
        return Err(KfpError::invalid("samples", "must be >= 1"));
    }
    if !(spec.tau_min > 0.0 && spec.tau_max > spec.tau_min) {
        return Err(KfpError::invalid("tau_range", "need 0 < tau_min < tau_max"));
    }
    Ok(())
}

fn check_multi_index(st: &ModelStructure, a: &[usize]) -> Result<()> {
    if a.len() != st.dim() {
        return Err(KfpError::Dimension { expected: st.dim(), got: a.len() });
    }
    Ok(())
}

/// `(lhs, t - s, Gamma_lambda prefactor data, d)` for one sample.
struct BoundRow {
    lhs: f64,
    tau: f64,
    /// `<C_I^{-1} v, v>` and `log det C_I` for the identity-coefficient kernel.
    quad_i: f64,
    log_det_i: f64,
    dist: f64,
}

/// Fits `|D^{a1}_x D^{a2}_y Gamma| <= c (t-s)^{-w/2} Gamma_lambda` with
/// `Gamma_lambda` the kernel of `A = lambda I` (scanned over a log grid) and
/// `|D Gamma| <= c d^{-Q-w}`, with `w = sum q_i (a1_i + a2_i)`.
pub fn gaussian_bound_check(
    model: &CoefficientModel,
    alpha1: &[usize],
    alpha2: &[usize],
    spec: &BoundSampleSpec,
) -> Result<EstimateReport> {
    validate_spec(spec)?;
    let st = model.structure();
    check_multi_index(st, alpha1)?;
    check_multi_index(st, alpha2)?;
    let n = st.dim();
    let w = weighted_order(st, alpha1, alpha2) as f64;
    let qq = st.hom_dim() as f64;
    let identity = CoefficientModel::constant(st.clone(), nalgebra::DMatrix::identity(st.q(), st.q()), 1.0)?;
    let total = 2 * spec.samples;
    let rows: Vec<BoundRow> = (0..total as u64)
        .into_par_iter()
        .map(|i| {
            let b = draw_bound_sample(st, spec, "gaussian_bound", i);
            let ws = covariance(model, b.t, b.s)?;
            let lhs = ws.derivative(&b.x, &b.y, alpha1, alpha2)?.abs();
            let wi = covariance(&identity, b.t, b.s)?;
            let v = wi.displacement(&b.x, &b.y);
            let dist = st.quasi_distance(&GroupPoint::from_slice(&b.x, b.t), &GroupPoint::from_slice(&b.y, b.s));
            Ok(BoundRow { lhs, tau: b.t - b.s, quad_i: v.dot(&(&wi.c_inv * &v)), log_det_i: wi.det_c.ln(), dist })
        })
        .collect::<Result<_>>()?;
    let lambdas: Vec<f64> = (0..=40).map(|j| 2f64.powf(j as f64 / 4.0)).collect();
    let fit = |rows: &[BoundRow]| {
        let lhs: Vec<f64> = rows.iter().map(|r| r.lhs).collect();
        let (c1, lam) = two_level_fit(&lhs, &lambdas, |lam| {
            rows.iter()
                .map(|r| {
                    let log_g = -0.5 * n as f64 * (4.0 * std::f64::consts::PI * lam).ln() - 0.5 * r.log_det_i
                        - 0.25 * r.quad_i / lam;
                    (log_g - 0.5 * w * r.tau.ln()).exp()
                })
                .collect()
        });
        let rhs2: Vec<f64> = rows.iter().map(|r| r.dist.powf(-qq - w)).collect();
        let c2 = max_ratio(&lhs, &rhs2);
        (c1, lam, c2, lhs, rhs2)
    };
    let (c1h, _, c2h, _, _) = fit(&rows[..spec.samples]);
    let (c1, lam, c2, lhs, rhs2) = fit(&rows);
    let stability = relative_change(c1, c1h).max(relative_change(c2, c2h));
    let mut rep = EstimateReport::new("gaussian_bound", "c (t-s)^{-w/2} Gamma_lambda(x,t;y,s); c d^{-Q-w}")
        .with_samples(lhs, rhs2)
        .with_seed(spec.seed)
        .with_extra("lambda", lam)
        .with_extra("c_star_distance", c2)
        .with_extra("weighted_order", w)
        .with_grid_hash(&[spec.samples as f64, spec.tau_min, spec.tau_max, spec.spread, w]);
    rep.c_star = c1;
    rep.stability = stability;
    let mut rep = rep.judge(f64::INFINITY, 0.1);
    rep.pass &= c2.is_finite();
    Ok(rep)
}

/// Separation condition `d(xi1, eta) >= 4 kappa d(xi1, xi2) > 0`.
pub fn separation_ok(st: &ModelStructure, kappa: f64, xi1: &GroupPoint, xi2: &GroupPoint, eta: &GroupPoint) -> bool {
    let d12 = st.quasi_distance(xi1, xi2);
    d12 > 0.0 && st.quasi_distance(xi1, eta) >= 4.0 * kappa * d12
}

/// Fits `|D^a_x Gamma(xi1; eta) - D^a_x Gamma(xi2; eta)| <= c d(xi1,xi2) / d(xi1,eta)^{Q+w+1}`
/// over triples meeting [`separation_ok`].
pub fn mean_value_check(model: &CoefficientModel, alpha: &[usize], spec: &BoundSampleSpec) -> Result<EstimateReport> {
    validate_spec(spec)?;
    let st = model.structure();
    check_multi_index(st, alpha)?;
    let n = st.dim();
    let zero = vec![0usize; n];
    let w = weighted_order(st, alpha, &zero) as f64;
    let qq = st.hom_dim() as f64;
    let kappa = match spec.kappa {
        Some(k) => k,
        None => estimate_structural_constants(st, 20_000, spec.seed, &DomainBox::cube(n, 1.0, (0.0, 1.0)))?.kappa,
    };
    let total = 2 * spec.samples;
    let rows: Vec<Option<(f64, f64)>> = (0..total as u64)
        .into_par_iter()
        .map(|i| {
            let b = draw_bound_sample(st, spec, "mean_value", i);
            let mut rng = rng::stream(spec.seed, "mean_value_offset", i);
            let lam = 10f64.powf(rng.random_range(-4.0..-1.0));
            let wx: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wt = rng.random_range(-1.0..1.0);
            let xi1 = GroupPoint::from_slice(&b.x, b.t);
            let eta = GroupPoint::from_slice(&b.y, b.s);
            let xi2 = st.compose(&xi1, &st.dilate(lam, &GroupPoint::from_slice(&wx, wt))?);
            if xi2.t <= b.s || !separation_ok(st, kappa, &xi1, &xi2, &eta) {
                return Ok(None);
            }
            let g1 = covariance(model, b.t, b.s)?.derivative(&b.x, &b.y, alpha, &zero)?;
            let g2 = covariance(model, xi2.t, b.s)?.derivative(xi2.x.as_slice(), &b.y, alpha, &zero)?;
            let rhs = st.quasi_distance(&xi1, &xi2) / st.quasi_distance(&xi1, &eta).powf(qq + w + 1.0);
            Ok(Some(((g1 - g2).abs(), rhs)))
        })
        .collect::<Result<_>>()?;
    let split = |rows: &[Option<(f64, f64)>]| -> (Vec<f64>, Vec<f64>) { rows.iter().flatten().cloned().unzip() };
    let (lh, rh) = split(&rows[..spec.samples]);
    let (lhs, rhs) = split(&rows);
    if lhs.is_empty() {
        return Err(KfpError::Infeasible("no sampled triple met the separation condition".into()));
    }
    let c_half = max_ratio(&lh, &rh);
    let c = max_ratio(&lhs, &rhs);
    let mut rep = EstimateReport::new("mean_value", "c d(xi1,xi2) / d(xi1,eta)^{Q+w+1}")
        .with_samples(lhs, rhs)
        .with_seed(spec.seed)
        .with_extra("kappa", kappa)
        .with_extra("accepted_fraction", rows.iter().flatten().count() as f64 / total as f64)
        .with_grid_hash(&[spec.samples as f64, spec.tau_min, spec.tau_max, spec.spread, w, kappa]);
    rep.c_star = c;
    rep.stability = relative_change(c, c_half);
    Ok(rep.judge(f64::INFINITY, 0.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn kolmogorov() -> CoefficientModel {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        CoefficientModel::constant(s, DMatrix::from_element(1, 1, 1.0), 1.0).unwrap()
    }

    #[test]
    fn normalization_heat_exact() {
        let s = ModelStructure::build(&[2], None).unwrap();
        let m = CoefficientModel::constant(s, DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.7]), 0.5).unwrap();
        let r = gamma_normalization_check(&m, &[0.3, -0.4], 0.8, 0.1, &QuadratureSpec::default()).unwrap();
        assert!(r.lhs_max < 1e-13, "{}", r.lhs_max);
    }

    #[test]
    fn chapman_kolmogorov_kolmogorov() {
        let r = chapman_kolmogorov_check(&kolmogorov(), &[0.2, -0.1], 1.0, 0.5, &[0.0, 0.3], 0.0, &QuadratureSpec::default())
            .unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn residual_rejects_pole_points() {
        let spec = ResidualGridSpec { points: vec![(vec![0.0, 0.0], 0.01)], ..Default::default() };
        assert!(matches!(lgamma_residual_check(&kolmogorov(), &[0.0, 0.0], 0.0, &spec), Err(KfpError::Grid(_))));
    }

    #[test]
    fn separation_filter() {
        let st = kolmogorov().structure().clone();
        let xi1 = GroupPoint::from_slice(&[0.0, 0.0], 1.0);
        let eta = GroupPoint::from_slice(&[0.0, 0.0], 0.0);
        assert!(!separation_ok(&st, 1.0, &xi1, &xi1, &eta));
        let far = GroupPoint::from_slice(&[0.5, 0.0], 1.0);
        assert!(!separation_ok(&st, 1.0, &xi1, &far, &eta));
        let near = GroupPoint::from_slice(&[1e-3, 0.0], 1.0);
        assert!(separation_ok(&st, 1.0, &xi1, &near, &eta));
    }

    #[test]
    fn zeroth_order_bound_is_one() {
        let spec = BoundSampleSpec { samples: 500, ..Default::default() };
        let r = gaussian_bound_check(&kolmogorov(), &[0, 0], &[0, 0], &spec).unwrap();
        assert!((r.c_star - 1.0).abs() < 1e-9, "{}", r.c_star);
    }
}
