//! Quadrature primitives: Gauss-Legendre and Gauss-Hermite rules, tensor
//! Hermite grids, adaptive Gauss-Kronrod on finite intervals and a chunked
//! integrator for half-lines with a three-way convergence verdict.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{KfpError, Result};

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&n) {
        return r.clone();
    }
    let rule = Arc::new(legendre_rule(n));
    cache.lock().unwrap().insert(n, rule.clone());
    rule
}

fn legendre_rule(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

/// Gauss-Hermite rule for the standard normal measure: sum of weights is 1
/// and `sum w_i f(x_i)` approximates `E[f(X)]`, `X ~ N(0, 1)`.
pub fn gauss_hermite_normal(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&n) {
        return r.clone();
    }
    let phys = hermite_rule(n);
    let rule = Arc::new(Rule {
        nodes: phys.nodes.iter().map(|x| x * 2f64.sqrt()).collect(),
        weights: phys.weights.iter().map(|w| w / PI.sqrt()).collect(),
    });
    cache.lock().unwrap().insert(n, rule.clone());
    rule
}

/// Physicists' Gauss-Hermite rule (weight `exp(-x^2)`): Jacobi-matrix
/// eigenvalues as starting points, then Newton on the orthonormal recurrence.
fn hermite_rule(n: usize) -> Rule {
    assert!(n >= 1);
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (0.5 * i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut start = nalgebra::SymmetricEigen::new(jacobi).eigenvalues.as_slice().to_vec();
    start.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = if 2 * i + 1 == n { 0.0 } else { start[i] };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            if !pp.is_finite() {
                break;
            }
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = if pp.is_finite() { 2.0 / (pp * pp) } else { 0.0 };
        weights[n - 1 - i] = weights[i];
    }
    // ascending order
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| nodes[a].partial_cmp(&nodes[b]).unwrap());
    Rule {
        nodes: idx.iter().map(|&i| nodes[i]).collect(),
        weights: idx.iter().map(|&i| weights[i]).collect(),
    }
}

/// Tensor-product Gauss-Hermite grid for the standard normal measure on
/// `R^dim`. Points are stored row-major, `dim` coordinates per node.
#[derive(Debug, Clone)]
pub struct NormalGrid {
    pub dim: usize,
    pub order: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalGrid {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

type GridCache = Mutex<HashMap<(usize, usize), Arc<NormalGrid>>>;

pub fn normal_grid(dim: usize, order: usize) -> Arc<NormalGrid> {
    static CACHE: OnceLock<GridCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(g) = cache.lock().unwrap().get(&(dim, order)) {
        return g.clone();
    }
    let rule = gauss_hermite_normal(order);
    let total = order.pow(dim as u32);
    let mut points = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let mut w = 1.0;
        for &k in &idx {
            points.push(rule.nodes[k]);
            w *= rule.weights[k];
        }
        weights.push(w);
        for d in (0..dim).rev() {
            idx[d] += 1;
            if idx[d] < order {
                break;
            }
            idx[d] = 0;
        }
    }
    let grid = Arc::new(NormalGrid {
        dim,
        order,
        points,
        weights,
    });
    cache.lock().unwrap().insert((dim, order), grid.clone());
    grid
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Fixed-order Gauss-Legendre on [a, b].
pub fn gauss_legendre_fixed<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let rule = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    let mut acc = CompensatedSum::new();
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        acc.add(w * f(c + h * x));
    }
    acc.value() * h
}

const GK_XK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * GK_WK[7];
    let mut gauss = fc * GK_WG[3];
    for j in 0..7 {
        let dx = h * GK_XK[j];
        let s = f(c - dx) + f(c + dx);
        kron += GK_WK[j] * s;
        if j % 2 == 1 {
            gauss += GK_WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) with global interval bisection. Returns the
/// integral and an error estimate.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    const MAX_INTERVALS: usize = 2000;
    let (v, e) = gk15(&mut f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    loop {
        if intervals.iter().any(|iv| !iv.2.is_finite() || !iv.3.is_finite()) {
            return Err(KfpError::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
        }
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        let mass: f64 = intervals.iter().map(|iv| iv.2.abs()).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        let floor = 50.0 * f64::EPSILON * mass;
        if err <= abs_tol.max(rel_tol * total.abs()).max(floor) {
            let mut acc = CompensatedSum::new();
            intervals.iter().for_each(|iv| acc.add(iv.2));
            return Ok((acc.value(), err));
        }
        if intervals.len() >= MAX_INTERVALS {
            return Err(KfpError::Quadrature(format!(
                "adaptive quadrature on [{a}, {b}] exhausted {MAX_INTERVALS} intervals (err {err:e})"
            )));
        }
        let (k, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (lo, hi, _, _) = intervals.swap_remove(k);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval collapsed to machine resolution
            let mut acc = CompensatedSum::new();
            intervals.iter().for_each(|iv| acc.add(iv.2));
            let (v, e) = gk15(&mut f, lo, hi);
            acc.add(v);
            return Ok((acc.value(), err + e));
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// Result of integrating over a half-line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HalfLine {
    Finite(f64),
    /// Partial sums exceeded the configured ceiling.
    Infinite,
    /// Neither converged nor exceeded the ceiling before the variable limit.
    Undetermined(f64),
}

impl HalfLine {
    pub fn value(self) -> f64 {
        match self {
            HalfLine::Finite(v) => v,
            HalfLine::Infinite => f64::INFINITY,
            HalfLine::Undetermined(_) => f64::NAN,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, HalfLine::Finite(_))
    }
}

/// Settings for [`integrate_half_line`].
#[derive(Debug, Clone, Copy)]
pub struct HalfLineOptions {
    pub chunk: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub ceiling: f64,
    pub v_max: f64,
}

impl Default for HalfLineOptions {
    fn default() -> Self {
        Self {
            chunk: 1.0,
            rel_tol: 1e-11,
            abs_tol: 1e-300,
            ceiling: 1e8,
            v_max: 700.0,
        }
    }
}

/// Integrate `f` over `[v0, inf)` chunk by chunk. Convergence is declared
/// after three consecutive chunks whose contribution is below `rel_tol`
/// times the running sum (or `abs_tol`).
pub fn integrate_half_line<F: FnMut(f64) -> f64>(
    mut f: F,
    v0: f64,
    opts: HalfLineOptions,
) -> Result<HalfLine> {
    let mut total = CompensatedSum::new();
    let mut quiet = 0;
    let mut v = v0;
    while v < opts.v_max {
        let hi = v + opts.chunk;
        let running = total.value().abs();
        let chunk_abs = (opts.abs_tol * 1e-3).max(opts.rel_tol * 1e-2 * running);
        let (c, _) = integrate(&mut f, v, hi, chunk_abs, opts.rel_tol * 1e-2)?;
        total.add(c);
        let s = total.value();
        if !s.is_finite() || s.abs() > opts.ceiling {
            return Ok(HalfLine::Infinite);
        }
        if c.abs() <= opts.abs_tol.max(opts.rel_tol * s.abs()) {
            quiet += 1;
            if quiet >= 3 {
                return Ok(HalfLine::Finite(s));
            }
        } else {
            quiet = 0;
        }
        v = hi;
    }
    Ok(HalfLine::Undetermined(total.value()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let v = gauss_legendre_fixed(|x| x.powi(9) + 3.0 * x * x, -1.0, 2.0, 5);
        let exact = (2f64.powi(10) - 1.0) / 10.0 + (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn hermite_moments_match_standard_normal() {
        let r = gauss_hermite_normal(20);
        let m0: f64 = r.weights.iter().sum();
        let m2: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x * x).sum();
        let m4: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 - 1.0).abs() < 1e-13);
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
    }

    #[test]
    fn high_order_hermite_is_accurate() {
        for n in [80, 128, 256, 512] {
            let r = gauss_hermite_normal(n);
            let m0: f64 = r.weights.iter().sum();
            // E[cos(X)] = exp(-1/2)
            let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.cos()).sum();
            assert!((m0 - 1.0).abs() < 1e-13, "n = {n}: {m0}");
            assert!((v - (-0.5f64).exp()).abs() < 1e-13, "n = {n}: {v}");
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let (v, _) = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-12, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-8);
    }

    #[test]
    fn half_line_verdicts() {
        let opts = HalfLineOptions::default();
        let conv = integrate_half_line(|v: f64| (-v).exp(), 0.0, opts).unwrap();
        assert!(matches!(conv, HalfLine::Finite(x) if (x - 1.0).abs() < 1e-10));
        let div = integrate_half_line(|v: f64| (0.5 * v).exp(), 0.0, opts).unwrap();
        assert_eq!(div, HalfLine::Infinite);
        let slow = integrate_half_line(|_| 1e-4, 0.0, opts).unwrap();
        assert!(matches!(slow, HalfLine::Undetermined(_)));
    }

    #[test]
    fn tensor_grid_is_normalised() {
        let g = normal_grid(3, 6);
        assert_eq!(g.len(), 216);
        let s: f64 = g.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-13);
    }
}
