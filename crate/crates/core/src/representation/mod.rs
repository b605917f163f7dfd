//! Representation formulas: Cauchy problems by kernel quadrature, `u` and
//! `grad u` from `L u`, and the singular integral
//!
//! `T_ij g(x,t) = int_{R^N x (tau,t)} D^2_{x_i x_j} Gamma(x,t;y,s) [g(E(s-t)x, s) - g(y, s)] dy ds`.
//!
//! Every space-time integral is split into time slices `sigma = t - s` in
//! `[sigma_{k+1}, sigma_k]` with `sigma_k = (t - tau) 2^{-k}`, Gauss-Legendre
//! in `sigma` on each slice and tensor Gauss-Hermite in the whitened
//! variable `y = E(s-t)(x - sqrt 2 L xi)` inside.

mod expr;
mod manufactured;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::geometry::{DomainBox, ModelStructure};
use crate::kernel::{covariance, covariance_lag, CoefficientModel, KernelWorkspace, QuadratureSpec};
use crate::moduli::{Modulus, ModulusDoc, Tail};
use crate::quadrature::{gauss_legendre, normal_grid, CompensatedSum, HalfLine};
use crate::rng;

pub use expr::Expr;
pub use manufactured::{frozen_residual, ManufacturedDoc, ManufacturedSolution};

pub type FieldFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// A prescribed `L u`, vanishing for `t <= tau`, with its declared partial modulus.
#[derive(Clone)]
pub struct SourceSpec {
    pub name: String,
    g: FieldFn,
    pub modulus: Modulus,
    pub tau: f64,
    pub t_end: f64,
    /// Times where `g` may jump; time slices are split there.
    pub t_breaks: Vec<f64>,
    dim: usize,
}

impl fmt::Debug for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceSpec")
            .field("name", &self.name)
            .field("modulus", &self.modulus)
            .field("tau", &self.tau)
            .field("t_end", &self.t_end)
            .field("t_breaks", &self.t_breaks)
            .finish()
    }
}

/// JSON form of a source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceDoc {
    Expr {
        name: String,
        expr: String,
        tau: f64,
        #[serde(rename = "T")]
        t_end: f64,
        #[serde(default)]
        t_breaks: Vec<f64>,
        /// Estimated on the domain when absent.
        #[serde(default)]
        modulus: Option<ModulusDoc>,
    },
    /// `L u` of a manufactured solution under the scenario coefficients.
    Manufactured(ManufacturedDoc),
}

impl SourceSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        g: FieldFn,
        modulus: Modulus,
        tau: f64,
        t_end: f64,
        t_breaks: Vec<f64>,
    ) -> Result<Self> {
        if !(t_end > tau) {
            return Err(KfpError::invalid("support", format!("need tau < T, got [{tau}, {t_end}]")));
        }
        let mut t_breaks = t_breaks;
        t_breaks.sort_by(f64::total_cmp);
        Ok(Self { name: name.into(), g, modulus, tau, t_end, t_breaks, dim })
    }

    /// The zero source on `[tau, T]`.
    pub fn zero(dim: usize, tau: f64, t_end: f64) -> Result<Self> {
        Self::new("zero", dim, Arc::new(|_, _| 0.0), Modulus::zero(), tau, t_end, Vec::new())
    }

    pub fn from_doc(model: &CoefficientModel, doc: &SourceDoc, domain: &DomainBox, seed: u64) -> Result<Self> {
        let s = model.structure();
        match doc {
            SourceDoc::Expr { name, expr, tau, t_end, t_breaks, modulus } => {
                let e = Expr::parse(expr, s.dim()).map_err(|e| KfpError::config(format!("sources.{name}.expr"), e.to_string()))?;
                let g: FieldFn = Arc::new(move |x, t| e.eval(x, t));
                let w = match modulus {
                    Some(m) => Modulus::from_doc(m)?,
                    None => lipschitz_modulus(s, &format!("lip({name})"), &g, domain, seed)?,
                };
                Self::new(name.clone(), s.dim(), g, w, *tau, *t_end, t_breaks.clone())
            }
            SourceDoc::Manufactured(m) => ManufacturedSolution::from_doc(s, m)?.source(model, seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `g(x,t)`, forced to 0 for `t <= tau`.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        if t <= self.tau {
            0.0
        } else {
            (self.g)(x, t)
        }
    }

    pub fn func(&self) -> FieldFn {
        self.g.clone()
    }

    /// Spot-checks the support in time and the declared modulus on random
    /// same-time pairs drawn from `domain`; returns the number of pairs checked.
    pub fn spot_check(&self, s: &ModelStructure, domain: &DomainBox, samples: usize, seed: u64) -> Result<usize> {
        let n = s.dim();
        let mut rng = rng::stream(seed, "source_spot_check", 0);
        let draw_x = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            domain.x.iter().map(|&(a, b)| rng.random_range(a..b)).collect()
        };
        for _ in 0..samples {
            let x = draw_x(&mut rng);
            let t = self.tau - rng.random::<f64>() * (self.t_end - self.tau);
            let v = (self.g)(&x, t);
            if v != 0.0 {
                return Err(KfpError::SupportViolation { t, tau: self.tau });
            }
        }
        for _ in 0..samples {
            let x = draw_x(&mut rng);
            let scale = 10f64.powf(rng.random_range(-4.0..0.5));
            let y: Vec<f64> = (0..n)
                .map(|i| x[i] + scale.powi(s.exponents()[i] as i32) * rng.random_range(-1.0..1.0))
                .collect();
            let (lo, hi) = (domain.t.0.max(self.tau), domain.t.1.min(self.t_end));
            let t = if hi > lo { rng.random_range(lo..hi) } else { self.t_end };
            let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let observed = (self.eval(&x, t) - self.eval(&y, t)).abs();
            let bound = self.modulus.eval(s.norm_x(&dx));
            if observed > bound * (1.0 + 1e-9) + 1e-12 {
                return Err(KfpError::ModulusViolation { observed, bound });
            }
        }
        Ok(samples)
    }
}

/// `omega(r) = min(lip sum_i r^{q_i}, cap)` with `lip` twice the largest
/// sampled Euclidean gradient of `g` on `domain` and `cap` 2.4 times its
/// largest sampled value; an estimated majorant, not a proof.
pub fn lipschitz_modulus(s: &ModelStructure, name: &str, g: &FieldFn, domain: &DomainBox, seed: u64) -> Result<Modulus> {
    let n = s.dim();
    let samples = 4096usize;
    let stats: Vec<(f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, "lipschitz_modulus", i);
            let x: Vec<f64> = domain.x.iter().map(|&(a, b)| rng.random_range(a..b)).collect();
            let t = rng.random_range(domain.t.0..domain.t.1);
            let h = 1e-5;
            let mut grad2 = 0.0;
            let mut p = x.clone();
            for k in 0..n {
                p[k] = x[k] + h;
                let up = g(&p, t);
                p[k] = x[k] - h;
                let dn = g(&p, t);
                p[k] = x[k];
                grad2 += ((up - dn) / (2.0 * h)).powi(2);
            }
            (grad2.sqrt(), g(&x, t).abs())
        })
        .collect();
    let lip = 2.0 * stats.iter().map(|p| p.0).fold(0.0, f64::max);
    let cap = 2.4 * stats.iter().map(|p| p.1).fold(0.0, f64::max);
    if lip == 0.0 || cap == 0.0 {
        return Ok(Modulus::zero().renamed(name));
    }
    let exps: Vec<i32> = s.exponents().iter().map(|&q| q as i32).collect();
    let raw = move |r: f64| lip * exps.iter().map(|&q| r.powi(q)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, 1.0);
    while raw(hi) < cap {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if raw(mid) < cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let start = hi;
    Modulus::analytic(
        name,
        Arc::new(move |r: f64| if r <= 0.0 { 0.0 } else if r >= start { cap } else { raw(r).min(cap) }),
        0.5,
        cap,
        Tail::constant(start, cap),
    )
}

/// Quadrature value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReprValue {
    pub value: f64,
    pub error_estimate: f64,
    pub slices: usize,
    pub inner_order: usize,
}

/// `u(x,t) = int Gamma(x,t;y,s) f(y) dy`, with Gauss-Hermite order doubled
/// from `spec.order` until the change is below `spec.tol` (absolute).
pub fn cauchy_solve(
    model: &CoefficientModel,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    s: f64,
    x: &[f64],
    t: f64,
    spec: &QuadratureSpec,
) -> Result<ReprValue> {
    let ws = covariance(model, t, s)?;
    let n = ws.dim();
    if x.len() != n {
        return Err(KfpError::Dimension { expected: n, got: x.len() });
    }
    let eval = |order: usize| -> f64 {
        let grid = normal_grid(n, order);
        let vals: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| grid.weights[i] * f(ws.whiten(x, grid.point(i)).as_slice()))
            .collect();
        let mut acc = CompensatedSum::new();
        for v in vals {
            acc.add(v);
        }
        acc.value()
    };
    let mut order = spec.order.max(2);
    let mut val = eval(order);
    loop {
        if order * 2 > spec.max_order {
            return Err(KfpError::Quadrature(format!("Cauchy quadrature did not reach {} by order {order}", spec.tol)));
        }
        order *= 2;
        let next = eval(order);
        let change = (next - val).abs();
        val = next;
        if change <= spec.tol {
            return Ok(ReprValue { value: val, error_estimate: change, slices: 0, inner_order: order });
        }
    }
}

/// Which kernel derivative multiplies the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReprKind {
    /// `u = -int Gamma g`
    Value,
    /// `u_{x_k} = -int D_{x_k} Gamma g`
    Grad(usize),
    /// `T_ij g`
    Hessian(usize, usize),
}

/// Settings of the sliced space-time quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReprOptions {
    /// Absolute error budget, half for the time slicing and half for the
    /// inner quadrature.
    pub budget: f64,
    /// Gauss-Legendre points per time slice.
    pub slice_order: usize,
    /// Starting Gauss-Hermite order; doubled on each slice until the change
    /// fits that slice's share of the inner budget.
    pub inner_order: usize,
    pub max_inner_order: usize,
    /// Cap on tensor Gauss-Hermite points.
    pub max_points: usize,
    pub max_slices: usize,
    /// Restricts the time integral to `s < t - truncate`.
    pub truncate: f64,
    /// Compares every bracket with the declared modulus.
    pub check_modulus: bool,
}

impl Default for ReprOptions {
    fn default() -> Self {
        Self {
            budget: 1e-6,
            slice_order: 8,
            inner_order: 8,
            max_inner_order: 64,
            max_points: 40_000,
            max_slices: 60,
            truncate: 0.0,
            check_modulus: true,
        }
    }
}

struct Node {
    s: f64,
    w: f64,
    ws: KernelWorkspace,
    /// `sqrt 2 E(s-t) L`, row-major.
    push: Vec<f64>,
    /// `L^{-T}`, row-major.
    lt_inv: Vec<f64>,
}

struct Slice {
    lo: f64,
    nodes: Vec<Node>,
}

/// Kernel data on all time slices below a fixed `t`; shared by every `x`.
pub struct SliceTable {
    t: f64,
    tau: f64,
    dim: usize,
    slices: Vec<Slice>,
    /// True when the last slice ends at the truncation level, not at a geometric cut.
    truncated: bool,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

impl SliceTable {
    pub fn new(model: &CoefficientModel, src: &SourceSpec, t: f64, opts: &ReprOptions) -> Result<Self> {
        let n = model.structure().dim();
        if src.dim() != n {
            return Err(KfpError::Dimension { expected: n, got: src.dim() });
        }
        if t > src.t_end {
            return Err(KfpError::invalid("t", format!("{t} lies beyond the source horizon {}", src.t_end)));
        }
        let sigma0 = t - src.tau;
        let mut table = Self { t, tau: src.tau, dim: n, slices: Vec::new(), truncated: false };
        if sigma0 <= 0.0 || opts.truncate >= sigma0 {
            return Ok(table);
        }
        let mut cuts: Vec<f64> = (0..=opts.max_slices).map(|k| sigma0 * 0.5f64.powi(k as i32)).collect();
        cuts.extend(src.t_breaks.iter().map(|b| t - b).filter(|&sg| sg > 0.0 && sg < sigma0));
        if opts.truncate > 0.0 {
            cuts.retain(|&c| c > opts.truncate);
            cuts.push(opts.truncate);
            table.truncated = true;
        }
        cuts.sort_by(|a, b| b.total_cmp(a));
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs());
        let rule = gauss_legendre(opts.slice_order);
        let pairs: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[1], w[0])).collect();
        table.slices = pairs
            .par_iter()
            .map(|&(lo, hi)| {
                let h = 0.5 * (hi - lo);
                let nodes = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(z, w)| {
                        let sigma = lo + h * (z + 1.0);
                        let s = t - sigma;
                        let ws = covariance_lag(model, t, sigma)?;
                        let push = row_major(&(&ws.e_st * &ws.l * std::f64::consts::SQRT_2));
                        let lt_inv = row_major(
                            &ws.l.transpose().try_inverse().ok_or(KfpError::Indefinite { t, s })?,
                        );
                        Ok(Node { s, w: w * h, ws, push, lt_inv })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Slice { lo, nodes })
            })
            .collect::<Result<_>>()?;
        Ok(table)
    }

    pub fn slice_count(&self) -> usize {
        self.slices.len()
    }

    /// `(sum, bound)` over the Gauss-Hermite grid at one node: the slice
    /// integrand and a majorant of its absolute value built from `|g|` or
    /// from the declared modulus.
    #[allow(clippy::too_many_arguments)]
    fn node_sum(&self, kind: ReprKind, node: &Node, src: &SourceSpec, x: &[f64], order: usize, check: bool, st: &ModelStructure) -> Result<(f64, f64)> {
        let n = self.dim;
        let grid = normal_grid(n, order);
        let ex = &node.ws.e_st * DVector::from_column_slice(x);
        let ex = ex.as_slice();
        let g_center = src.eval(ex, node.s);
        let c_inv = &node.ws.c_inv;
        let mut y = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut acc = CompensatedSum::new();
        let mut bound = 0.0;
        for i in 0..grid.len() {
            let xi = grid.point(i);
            for r in 0..n {
                let row = &node.push[r * n..(r + 1) * n];
                d[r] = row.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                y[r] = ex[r] - d[r];
            }
            let gy = src.eval(&y, node.s);
            let lt = |k: usize| node.lt_inv[k * n..(k + 1) * n].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            let w = grid.weights[i];
            match kind {
                ReprKind::Value => {
                    acc.add(-w * gy);
                    bound += w * gy.abs();
                }
                ReprKind::Grad(k) => {
                    let p = -std::f64::consts::FRAC_1_SQRT_2 * lt(k);
                    acc.add(-w * p * gy);
                    bound += w * (p * gy).abs();
                }
                ReprKind::Hessian(a, b) => {
                    let p = 0.5 * lt(a) * lt(b) - 0.5 * c_inv[(a, b)];
                    let br = g_center - gy;
                    acc.add(w * p * br);
                    let om = src.modulus.eval(st.norm_x(&d));
                    if check && br.abs() > om * (1.0 + 1e-9) + 1e-12 * g_center.abs().max(1.0) {
                        return Err(KfpError::ModulusViolation { observed: br.abs(), bound: om });
                    }
                    bound += w * p.abs() * om;
                }
            }
        }
        Ok((acc.value(), bound))
    }

    #[allow(clippy::too_many_arguments)]
    fn slice_sum(&self, kind: ReprKind, k: usize, src: &SourceSpec, x: &[f64], order: usize, check: bool, st: &ModelStructure) -> Result<f64> {
        let parts: Vec<f64> = self.slices[k]
            .nodes
            .par_iter()
            .map(|nd| self.node_sum(kind, nd, src, x, order, check, st).map(|(v, _)| nd.w * v))
            .collect::<Result<_>>()?;
        let mut acc = CompensatedSum::new();
        for p in parts {
            acc.add(p);
        }
        Ok(acc.value())
    }

    /// Sliced quadrature at `x` for the source the table was built with.
    pub fn eval(&self, model: &CoefficientModel, src: &SourceSpec, kind: ReprKind, x: &[f64], opts: &ReprOptions) -> Result<ReprValue> {
        let st = model.structure();
        let q = st.q();
        match kind {
            ReprKind::Grad(k) if k >= q => return Err(KfpError::invalid("k", format!("must be < q = {q}"))),
            ReprKind::Hessian(i, j) if i >= q || j >= q => {
                return Err(KfpError::invalid("ij", format!("indices must be < q = {q}")))
            }
            _ => {}
        }
        if x.len() != self.dim {
            return Err(KfpError::Dimension { expected: self.dim, got: x.len() });
        }
        if self.slices.is_empty() {
            return Ok(ReprValue { value: 0.0, error_estimate: 0.0, slices: 0, inner_order: 0 });
        }
        let max_order = {
            let mut o = opts.max_inner_order.max(opts.inner_order);
            while o > 2 && o.pow(self.dim as u32) > opts.max_points {
                o -= 1;
            }
            o
        };
        let check = opts.check_modulus && matches!(kind, ReprKind::Hessian(..));
        let start = opts.inner_order.clamp(2, max_order);
        // inner budget: a quarter of the total, split geometrically over slices
        let ratio = std::f64::consts::FRAC_1_SQRT_2;
        let mut acc = CompensatedSum::new();
        let mut inner_err = 0.0;
        let mut top_order = 0;
        let mut remainder = f64::INFINITY;
        let mut used = 0;
        for k in 0..self.slices.len() {
            let tol_k = 0.25 * opts.budget * (1.0 - ratio) * ratio.powi(k as i32);
            let mut order = start;
            let mut v = self.slice_sum(kind, k, src, x, order, check, st)?;
            let mut d = f64::INFINITY;
            while order < max_order {
                order = (order * 2).min(max_order);
                let next = self.slice_sum(kind, k, src, x, order, check, st)?;
                d = (next - v).abs();
                v = next;
                if d <= tol_k {
                    break;
                }
            }
            acc.add(v);
            inner_err += d;
            top_order = top_order.max(order);
            used = k + 1;
            if self.truncated && k + 1 == self.slices.len() {
                remainder = 0.0;
                break;
            }
            let b = self.slice_sum_bound(kind, k, src, x, order, st)?.1;
            remainder = self.remainder(kind, src, self.slices[k].lo, b)?;
            if remainder <= 0.5 * opts.budget {
                break;
            }
        }
        if remainder > 0.5 * opts.budget {
            return Err(KfpError::Quadrature(format!(
                "slice budget exhausted after {used} slices (remainder {remainder:e} > {:e})",
                0.5 * opts.budget
            )));
        }
        Ok(ReprValue { value: acc.value(), error_estimate: inner_err + remainder, slices: used, inner_order: top_order })
    }

    fn slice_sum_bound(&self, kind: ReprKind, k: usize, src: &SourceSpec, x: &[f64], order: usize, st: &ModelStructure) -> Result<(f64, f64)> {
        let nd = &self.slices[k].nodes[0];
        self.node_sum(kind, nd, src, x, order, false, st)
    }

    /// Bound on the integral over `sigma in (0, lo)` given the integrand
    /// majorant `b` near `sigma = lo`.
    fn remainder(&self, kind: ReprKind, src: &SourceSpec, lo: f64, b: f64) -> Result<f64> {
        Ok(match kind {
            ReprKind::Value => lo * b,
            ReprKind::Grad(_) => 2.0 * lo * b,
            ReprKind::Hessian(..) => {
                let r = lo.sqrt();
                let w = src.modulus.eval(r);
                if w == 0.0 {
                    0.0
                } else {
                    match src.modulus.phi(r)? {
                        HalfLine::Finite(p) => 2.0 * lo * b * p / w,
                        _ => return Err(KfpError::Divergent),
                    }
                }
            }
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

fn single(model: &CoefficientModel, src: &SourceSpec, kind: ReprKind, x: &[f64], t: f64, opts: &ReprOptions) -> Result<ReprValue> {
    SliceTable::new(model, src, t, opts)?.eval(model, src, kind, x, opts)
}

/// `u(x,t) = -int Gamma(x,t;y,s) g(y,s) dy ds`.
pub fn repr_u(model: &CoefficientModel, src: &SourceSpec, x: &[f64], t: f64, opts: &ReprOptions) -> Result<ReprValue> {
    single(model, src, ReprKind::Value, x, t, opts)
}

/// `u_{x_k}(x,t) = -int D_{x_k} Gamma(x,t;y,s) g(y,s) dy ds`, `k < q`.
pub fn repr_grad(model: &CoefficientModel, src: &SourceSpec, k: usize, x: &[f64], t: f64, opts: &ReprOptions) -> Result<ReprValue> {
    single(model, src, ReprKind::Grad(k), x, t, opts)
}

/// `T_ij g(x,t)`, `i, j < q`.
pub fn t_ij(model: &CoefficientModel, src: &SourceSpec, i: usize, j: usize, x: &[f64], t: f64, opts: &ReprOptions) -> Result<ReprValue> {
    single(model, src, ReprKind::Hessian(i, j), x, t, opts)
}

/// Evaluates `kind` at many points, sharing one slice table per distinct time.
pub fn repr_field(
    model: &CoefficientModel,
    src: &SourceSpec,
    kind: ReprKind,
    points: &[(Vec<f64>, f64)],
    opts: &ReprOptions,
) -> Result<Vec<ReprValue>> {
    let mut times: Vec<f64> = points.iter().map(|p| p.1).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let tables: Vec<SliceTable> = times.iter().map(|&t| SliceTable::new(model, src, t, opts)).collect::<Result<_>>()?;
    points
        .par_iter()
        .map(|(x, t)| {
            let k = times.partition_point(|v| v < t);
            tables[k].eval(model, src, kind, x, opts)
        })
        .collect()
}

/// `Y u = g - sum a_ij u_{x_i x_j}` from the supplied second derivatives.
pub fn y_from_identity(model: &CoefficientModel, g: f64, second_derivatives: &DMatrix<f64>, x: &[f64], t: f64) -> Result<f64> {
    let q = model.structure().q();
    if second_derivatives.shape() != (q, q) {
        return Err(KfpError::Dimension { expected: q, got: second_derivatives.nrows() });
    }
    let a = model.a(x, t);
    Ok(g - a.component_mul(second_derivatives).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kolmogorov() -> CoefficientModel {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        CoefficientModel::constant(s, DMatrix::from_element(1, 1, 1.0), 1.0).unwrap()
    }

    #[test]
    fn cauchy_constant_datum() {
        let v = cauchy_solve(&kolmogorov(), &|_| 1.0, 0.0, &[0.3, 0.1], 0.5, &QuadratureSpec::default()).unwrap();
        assert!((v.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_source_gives_zero() {
        let src = SourceSpec::zero(2, 0.0, 1.0).unwrap();
        let m = kolmogorov();
        let o = ReprOptions::default();
        assert_eq!(repr_u(&m, &src, &[0.1, 0.2], 0.7, &o).unwrap().value, 0.0);
        assert_eq!(t_ij(&m, &src, 0, 0, &[0.1, 0.2], 0.7, &o).unwrap().value, 0.0);
    }

    #[test]
    fn x_constant_source_has_zero_hessian() {
        let m = kolmogorov();
        let src = SourceSpec::new("h", 2, Arc::new(|_, t: f64| (3.0 * t).sin()), Modulus::zero(), 0.0, 1.0, vec![]).unwrap();
        let v = t_ij(&m, &src, 0, 0, &[0.4, -0.2], 0.9, &ReprOptions::default()).unwrap();
        assert!(v.value.abs() < 1e-14, "{v:?}");
    }

    #[test]
    fn modulus_violation_is_detected() {
        let m = kolmogorov();
        let lying = Modulus::power(1e-3, 0.5).unwrap();
        let src = SourceSpec::new("g", 2, Arc::new(|x: &[f64], _| x[0].sin()), lying, 0.0, 1.0, vec![]).unwrap();
        let r = t_ij(&m, &src, 0, 0, &[0.0, 0.0], 0.5, &ReprOptions::default());
        assert!(matches!(r, Err(KfpError::ModulusViolation { .. })));
    }

    #[test]
    fn spot_check_flags_support() {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        let src = SourceSpec::new("bad", 2, Arc::new(|_, _| 1.0), Modulus::zero(), 0.0, 1.0, vec![]).unwrap();
        let dom = DomainBox::cube(2, 1.0, (0.0, 1.0));
        assert!(matches!(src.spot_check(&s, &dom, 10, 1), Err(KfpError::SupportViolation { .. })));
    }

    #[test]
    fn y_identity_trivial() {
        let m = kolmogorov();
        assert_eq!(y_from_identity(&m, 0.0, &DMatrix::zeros(1, 1), &[0.0, 0.0], 0.5).unwrap(), 0.0);
    }
}
