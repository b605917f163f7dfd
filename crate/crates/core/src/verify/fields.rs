//! Grids, radii, tabulated transforms and Hoelder seminorms shared by the checkers.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{KfpError, Result};
use crate::geometry::{DomainBox, ModelStructure};
use crate::moduli::Modulus;

/// `n` equally spaced points on `[a, b]`.
pub fn axis(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Tensor grid on a domain box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLevel {
    pub x: Vec<Vec<f64>>,
    pub t: Vec<f64>,
}

impl GridLevel {
    pub fn on(domain: &DomainBox, nx: usize, nt: usize) -> Self {
        Self {
            x: domain.x.iter().map(|&(a, b)| axis(a, b, nx)).collect(),
            t: axis(domain.t.0, domain.t.1, nt),
        }
    }

    /// Spatial points in row-major order, last axis fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for ax in &self.x {
            out = out
                .into_iter()
                .flat_map(|p| {
                    ax.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }

    pub fn hash_parts(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.x.iter().flatten().copied().collect();
        v.extend(&self.t);
        v
    }
}

/// `count` log-spaced radii from `h` to the anisotropic diameter of the box.
pub fn radii(s: &ModelStructure, domain: &DomainBox, h: f64, count: usize) -> Vec<f64> {
    let ext: Vec<f64> = domain.x.iter().map(|(a, b)| b - a).collect();
    let diam = s.norm_x(&ext);
    let (l0, l1) = (h.ln(), diam.ln());
    (0..count).map(|j| (l0 + (l1 - l0) * j as f64 / (count - 1) as f64).exp()).collect()
}

/// Smallest anisotropic spacing of a grid.
pub fn resolution(s: &ModelStructure, level: &GridLevel) -> f64 {
    level
        .x
        .iter()
        .zip(s.exponents())
        .map(|(g, &q)| (g[1] - g[0]).abs().powf(1.0 / q as f64))
        .fold(f64::INFINITY, f64::min)
}

/// A non-decreasing function of `rho > 0` tabulated on a log grid and
/// interpolated linearly in `log rho`.
#[derive(Debug, Clone)]
pub struct Table {
    lr: Vec<f64>,
    v: Vec<f64>,
}

impl Table {
    /// Tabulates `f` on `[lo, hi]` with `per_decade` points per decade.
    pub fn build<F>(lo: f64, hi: f64, per_decade: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> Result<f64> + Sync,
    {
        if !(lo > 0.0 && hi >= lo) {
            return Err(KfpError::invalid("table", format!("bad range [{lo}, {hi}]")));
        }
        let (l0, l1) = (lo.ln(), hi.ln());
        let n = (((l1 - l0) / std::f64::consts::LN_10 * per_decade as f64).ceil() as usize).max(1) + 1;
        let lr: Vec<f64> = (0..n).map(|i| l0 + (l1 - l0) * i as f64 / (n - 1) as f64).collect();
        let v = lr.par_iter().map(|&l| f(l.exp())).collect::<Result<Vec<f64>>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(KfpError::Divergent);
        }
        Ok(Self { lr, v })
    }

    /// Value at `rho`; linear towards 0 below the table, constant above it.
    pub fn eval(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        let l = rho.ln();
        let n = self.lr.len();
        if n == 1 || l <= self.lr[0] {
            return self.v[0] * (l - self.lr[0]).exp().min(1.0);
        }
        if l >= self.lr[n - 1] {
            return self.v[n - 1];
        }
        let i = self.lr.partition_point(|&x| x <= l).clamp(1, n - 1);
        let th = (l - self.lr[i - 1]) / (self.lr[i] - self.lr[i - 1]);
        self.v[i - 1] + th * (self.v[i] - self.v[i - 1])
    }
}

/// `(min, max)` of `c * v` over scales `c` and positive `v`; `None` when no `v > 0`.
pub fn scaled_range(scales: &[f64], v: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for x in v.filter(|&x| x > 0.0) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if hi == 0.0 {
        return None;
    }
    let cmin = scales.iter().cloned().fold(f64::INFINITY, f64::min);
    let cmax = scales.iter().cloned().fold(0.0, f64::max);
    Some((lo * cmin, hi * cmax))
}

/// `k omega` as a table over `range`, or the zero table.
pub fn modulus_table<F>(range: Option<(f64, f64)>, f: F) -> Result<Table>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    match range {
        None => Ok(Table { lr: vec![0.0], v: vec![0.0] }),
        Some((lo, hi)) => Table::build(lo, hi, 12, f),
    }
}

/// `E(dt)` for every difference of a time grid, indexed by `i - j + n - 1`.
pub struct TimeShifts {
    n: usize,
    e: Vec<DMatrix<f64>>,
    dt: Vec<f64>,
}

impl TimeShifts {
    pub fn new(s: &ModelStructure, t: &[f64]) -> Self {
        let n = t.len();
        let mut e = Vec::with_capacity(2 * n - 1);
        let mut dt = Vec::with_capacity(2 * n - 1);
        for k in 0..2 * n - 1 {
            // i - j = k - (n-1); with a uniform grid dt = t[i] - t[j]
            let d = k as isize - (n as isize - 1);
            let v = if d >= 0 { t[d as usize] - t[0] } else { t[0] - t[(-d) as usize] };
            e.push(s.exp_neg_tb(v));
            dt.push(v);
        }
        Self { n, e, dt }
    }

    /// `d((x1, t_i), (x2, t_j)) = ||x1 - E(t_i - t_j) x2|| + sqrt|t_i - t_j|`
    /// for a uniform time grid.
    pub fn distance(&self, s: &ModelStructure, x1: &[f64], i: usize, x2: &[f64], j: usize, buf: &mut [f64]) -> f64 {
        let k = i + self.n - 1 - j;
        let e = &self.e[k];
        for (r, b) in buf.iter_mut().enumerate() {
            let mut acc = x1[r];
            for c in 0..x2.len() {
                acc -= e[(r, c)] * x2[c];
            }
            *b = acc;
        }
        s.norm_x(buf) + self.dt[k].abs().sqrt()
    }
}

/// Values of several fields at points `(x, t_index)` of a uniform time grid.
pub struct PointCloud {
    pub x: Vec<Vec<f64>>,
    pub ti: Vec<usize>,
    /// `fields[f][p]`.
    pub fields: Vec<Vec<f64>>,
}

/// `[f]_alpha = max |f(p) - f(q)| / d(p,q)^alpha` over all pairs, for each field.
pub fn holder_seminorms(s: &ModelStructure, shifts: &TimeShifts, cloud: &PointCloud, alpha: f64) -> Vec<f64> {
    let np = cloud.x.len();
    let nf = cloud.fields.len();
    let n = s.dim();
    let per: Vec<Vec<f64>> = (0..np)
        .into_par_iter()
        .map(|p| {
            let mut best = vec![0.0f64; nf];
            let mut buf = vec![0.0; n];
            for q in p + 1..np {
                let d = shifts.distance(s, &cloud.x[p], cloud.ti[p], &cloud.x[q], cloud.ti[q], &mut buf);
                if d <= 0.0 {
                    continue;
                }
                let da = d.powf(alpha);
                for (f, b) in cloud.fields.iter().zip(best.iter_mut()) {
                    let r = (f[p] - f[q]).abs() / da;
                    if r > *b {
                        *b = r;
                    }
                }
            }
            best
        })
        .collect();
    let mut out = vec![0.0f64; nf];
    for b in per {
        for (o, v) in out.iter_mut().zip(b) {
            *o = o.max(v);
        }
    }
    out
}

/// Sub-lattice of `level` with at most `cap` points, keeping both ends of every axis.
pub fn sub_lattice(level: &GridLevel, cap: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let axes = level.x.len() + 1;
    let mut stride = 1usize;
    loop {
        let count = |len: usize| (len - 1) / stride + 1;
        let total: usize = level.x.iter().map(|g| count(g.len())).product::<usize>() * count(level.t.len());
        if total <= cap || stride > 1 << 20 {
            break;
        }
        stride += 1;
    }
    let pick = |len: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..len).step_by(stride).collect();
        if *v.last().unwrap() != len - 1 && v.len() * axes < cap {
            v.push(len - 1);
        }
        v
    };
    (level.x.iter().map(|g| pick(g.len())).collect(), pick(level.t.len()))
}

/// Cartesian product of per-axis index lists, last axis fastest.
pub fn index_product(axes: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for ax in axes {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                ax.iter().map(move |&i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

/// `M(omega)` tabulated at 12 points per decade on `[lo, hi]`, so that
/// `M(M(omega))` and `U^mu` of it avoid nested adaptive quadrature.
pub fn tabulated_m(w: &Modulus, lo: f64, hi: f64) -> Result<Modulus> {
    let (l0, l1) = (lo.ln(), hi.ln());
    let n = ((l1 - l0) / std::f64::consts::LN_10 * 12.0).ceil() as usize + 1;
    let grid = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp();
            Ok((r, w.m(r)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Modulus::tabulated(format!("M({})", w.name()), &grid, w.alpha(), None)
}

/// `sum_{i,j<q}` of the declared modulus of each coefficient entry.
pub fn coefficient_modulus(model: &crate::kernel::CoefficientModel) -> Option<Modulus> {
    let q = model.structure().q();
    model.perturbation().and_then(|p| p.modulus.scaled((q * q) as f64).ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_interpolates_monotone_functions() {
        let t = Table::build(1e-3, 10.0, 12, |r| Ok(r.sqrt())).unwrap();
        for r in [2e-3, 0.05, 0.7, 9.0] {
            assert!((t.eval(r) - r.sqrt()).abs() < 0.01 * r.sqrt());
        }
        assert_eq!(t.eval(0.0), 0.0);
        assert!((t.eval(100.0) - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn shifted_distance_matches_geometry() {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        let t = axis(0.0, 1.0, 5);
        let sh = TimeShifts::new(&s, &t);
        let (x1, x2) = ([0.3, -0.2], [-0.1, 0.4]);
        let mut buf = [0.0; 2];
        for (i, j) in [(0, 3), (4, 1), (2, 2)] {
            let d = sh.distance(&s, &x1, i, &x2, j, &mut buf);
            let a = crate::geometry::GroupPoint::from_slice(&x1, t[i]);
            let b = crate::geometry::GroupPoint::from_slice(&x2, t[j]);
            assert!((d - s.quasi_distance(&a, &b)).abs() < 1e-14);
        }
    }

    #[test]
    fn sub_lattice_respects_cap() {
        let d = DomainBox::cube(2, 1.0, (0.0, 1.0));
        let lvl = GridLevel::on(&d, 33, 17);
        let (xs, ts) = sub_lattice(&lvl, 2500);
        let total: usize = xs.iter().map(|v| v.len()).product::<usize>() * ts.len();
        assert!(total <= 2500 && total > 300, "{total}");
    }
}
