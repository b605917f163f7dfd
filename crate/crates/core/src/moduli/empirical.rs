//! Partial moduli of sampled fields: the sup of `|f(x,t) - f(y,t)|` over
//! same-time grid pairs with `||x - y|| <= r`.

use rayon::prelude::*;

use super::Modulus;
use crate::error::{KfpError, Result};
use crate::geometry::{GroupPoint, ModelStructure};
use crate::report::{max_ratio, EstimateReport};

/// Values of a field on a tensor grid `x_1 x ... x x_N x t`.
#[derive(Debug, Clone)]
pub struct SampledField {
    structure: ModelStructure,
    x_grids: Vec<Vec<f64>>,
    t_grid: Vec<f64>,
    /// `values[ti * n_x + xi]`, spatial index row-major with the last axis fastest.
    values: Vec<f64>,
    index: Vec<Vec<usize>>,
}

fn strictly_increasing(g: &[f64]) -> bool {
    !g.is_empty() && g.iter().all(|v| v.is_finite()) && g.windows(2).all(|w| w[1] > w[0])
}

fn multi_indices(sizes: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = sizes.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; sizes.len()];
    for _ in 0..total {
        out.push(idx.clone());
        for d in (0..sizes.len()).rev() {
            idx[d] += 1;
            if idx[d] < sizes[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

impl SampledField {
    pub fn new(
        s: &ModelStructure,
        x_grids: Vec<Vec<f64>>,
        t_grid: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if x_grids.len() != s.dim() {
            return Err(KfpError::Dimension { expected: s.dim(), got: x_grids.len() });
        }
        if !x_grids.iter().all(|g| strictly_increasing(g)) || !strictly_increasing(&t_grid) {
            return Err(KfpError::Grid("grid axes must be finite and strictly increasing".into()));
        }
        let sizes: Vec<usize> = x_grids.iter().map(|g| g.len()).collect();
        let n_x: usize = sizes.iter().product();
        if values.len() != n_x * t_grid.len() {
            return Err(KfpError::Grid(format!(
                "expected {} values, got {}",
                n_x * t_grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KfpError::Grid("field values must be finite".into()));
        }
        Ok(Self {
            structure: s.clone(),
            index: multi_indices(&sizes),
            x_grids,
            t_grid,
            values,
        })
    }

    /// Samples `f(x, t)` on the grid.
    pub fn from_fn<F>(s: &ModelStructure, x_grids: Vec<Vec<f64>>, t_grid: Vec<f64>, f: F) -> Result<Self>
    where
        F: Fn(&[f64], f64) -> f64 + Sync + Send,
    {
        let sizes: Vec<usize> = x_grids.iter().map(|g| g.len()).collect();
        let idx = multi_indices(&sizes);
        let values: Vec<f64> = t_grid
            .par_iter()
            .flat_map_iter(|&t| {
                let xg = &x_grids;
                let f = &f;
                idx.iter().map(move |mi| {
                    let x: Vec<f64> = mi.iter().enumerate().map(|(a, &i)| xg[a][i]).collect();
                    f(&x, t)
                })
            })
            .collect();
        Self::new(s, x_grids, t_grid, values)
    }

    pub fn structure(&self) -> &ModelStructure {
        &self.structure
    }

    pub fn x_grids(&self) -> &[Vec<f64>] {
        &self.x_grids
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_x(&self) -> usize {
        self.index.len()
    }

    pub fn point(&self, xi: usize) -> Vec<f64> {
        self.index[xi].iter().enumerate().map(|(a, &i)| self.x_grids[a][i]).collect()
    }

    pub fn value(&self, ti: usize, xi: usize) -> f64 {
        self.values[ti * self.n_x() + xi]
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Smallest nonzero same-time distance between grid points.
pub fn grid_resolution(f: &SampledField) -> f64 {
    f.x_grids
        .iter()
        .zip(f.structure.exponents())
        .map(|(g, &q)| {
            let h = g.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            h.powf(1.0 / q as f64)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Bucketed, prefix-maximized modulus values at `radii`. `keep(ti, xi)`
/// restricts the pairs to points it accepts.
pub fn partial_modulus_values(
    f: &SampledField,
    radii: &[f64],
    keep: Option<&(dyn Fn(usize, usize) -> bool + Sync)>,
) -> Vec<f64> {
    let tables: Vec<Vec<Vec<f64>>> = f
        .x_grids
        .iter()
        .zip(f.structure.exponents())
        .map(|(g, &q)| {
            g.iter()
                .map(|a| g.iter().map(|b| (a - b).abs().powf(1.0 / q as f64)).collect())
                .collect()
        })
        .collect();
    let r_max = *radii.last().unwrap();
    let n_x = f.n_x();
    let per_t: Vec<Vec<f64>> = (0..f.t_grid.len())
        .into_par_iter()
        .map(|ti| {
            let mut buckets = vec![0.0f64; radii.len()];
            let kept: Vec<usize> = (0..n_x).filter(|&xi| keep.is_none_or(|k| k(ti, xi))).collect();
            for (a, &p) in kept.iter().enumerate() {
                let vp = f.values[ti * n_x + p];
                for &q in &kept[a + 1..] {
                    let dist: f64 = f.index[p]
                        .iter()
                        .zip(&f.index[q])
                        .zip(&tables)
                        .map(|((&i, &j), tab)| tab[i][j])
                        .sum();
                    if dist > r_max {
                        continue;
                    }
                    let b = radii.partition_point(|&r| r < dist);
                    let diff = (vp - f.values[ti * n_x + q]).abs();
                    if diff > buckets[b] {
                        buckets[b] = diff;
                    }
                }
            }
            buckets
        })
        .collect();
    let mut out = vec![0.0f64; radii.len()];
    for b in per_t {
        for (o, v) in out.iter_mut().zip(b) {
            *o = o.max(v);
        }
    }
    let mut run = 0.0f64;
    for o in out.iter_mut() {
        run = run.max(*o);
        *o = run;
    }
    out
}

fn check_radii(f: &SampledField, radii: &[f64]) -> Result<()> {
    if radii.is_empty() || !strictly_increasing(radii) || radii[0] <= 0.0 {
        return Err(KfpError::Grid("radii must be positive and strictly increasing".into()));
    }
    let h = grid_resolution(f);
    if radii[0] < h * (1.0 - 1e-12) {
        return Err(KfpError::Grid(format!(
            "smallest radius {} is below the grid resolution {h}",
            radii[0]
        )));
    }
    Ok(())
}

/// Tabulated partial modulus `omega_{f,Omega}` at `radii`.
pub fn empirical_modulus(f: &SampledField, radii: &[f64]) -> Result<Modulus> {
    check_radii(f, radii)?;
    let vals = partial_modulus_values(f, radii, None);
    let grid: Vec<(f64, f64)> = radii.iter().copied().zip(vals).collect();
    Modulus::tabulated("empirical", &grid, 0.5, None)
}

/// Compares the modulus over the whole grid with the one restricted to the
/// closed ball `d(., center) <= radius`, for a field vanishing off the ball.
/// The admissible gap is the largest `|f|` on ball points adjacent to the
/// complement, the grid analogue of the boundary where `f` vanishes.
pub fn support_locality_check(
    f: &SampledField,
    center: &GroupPoint,
    radius: f64,
    radii: &[f64],
) -> Result<EstimateReport> {
    check_radii(f, radii)?;
    let s = &f.structure;
    let n_x = f.n_x();
    let nt = f.t_grid.len();
    let mut inside = vec![false; nt * n_x];
    for ti in 0..nt {
        for xi in 0..n_x {
            let p = GroupPoint::from_slice(&f.point(xi), f.t_grid[ti]);
            inside[ti * n_x + xi] = s.quasi_distance(&p, center) <= radius;
        }
    }
    let floor = 1e-14 * f.sup_abs().max(1e-300);
    for (k, &ins) in inside.iter().enumerate() {
        if !ins && f.values[k].abs() > floor {
            let (ti, xi) = (k / n_x, k % n_x);
            return Err(KfpError::SupportOutsideBall(format!(
                "f = {} at x = {:?}, t = {}",
                f.values[k],
                f.point(xi),
                f.t_grid[ti]
            )));
        }
    }
    let sizes: Vec<usize> = f.x_grids.iter().map(|g| g.len()).collect();
    let strides: Vec<usize> = (0..sizes.len()).map(|a| sizes[a + 1..].iter().product()).collect();
    let mut layer: f64 = 0.0;
    for ti in 0..nt {
        for xi in 0..n_x {
            if !inside[ti * n_x + xi] {
                continue;
            }
            let touches = f.index[xi].iter().enumerate().any(|(a, &i)| {
                let lo = i > 0 && !inside[ti * n_x + xi - strides[a]];
                let hi = i + 1 < sizes[a] && !inside[ti * n_x + xi + strides[a]];
                lo || hi
            });
            if touches {
                layer = layer.max(f.values[ti * n_x + xi].abs());
            }
        }
    }
    let whole = partial_modulus_values(f, radii, None);
    let keep = |ti: usize, xi: usize| inside[ti * n_x + xi];
    let ball = partial_modulus_values(f, radii, Some(&keep));
    let gap = whole.iter().zip(&ball).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut rep = EstimateReport::new("support_locality", "omega_{f,B}(r)")
        .with_samples(whole.clone(), ball.clone())
        .with_extra("max_gap", gap)
        .with_extra("boundary_layer", layer)
        .with_grid_hash(radii);
    rep.c_star = max_ratio(&whole, &ball);
    rep.tolerance = layer;
    rep.pass = gap <= layer + floor;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    fn brute(f: &SampledField, r: f64) -> f64 {
        let mut m: f64 = 0.0;
        for ti in 0..f.t_grid().len() {
            for p in 0..f.n_x() {
                for q in 0..f.n_x() {
                    let d: Vec<f64> = f.point(p).iter().zip(f.point(q)).map(|(a, b)| a - b).collect();
                    if f.structure().norm_x(&d) <= r {
                        m = m.max((f.value(ti, p) - f.value(ti, q)).abs());
                    }
                }
            }
        }
        m
    }

    #[test]
    fn linear_field_matches_brute_force() {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        let g = lin(0.0, 1.0, 9);
        let f = SampledField::from_fn(&s, vec![g.clone(), g.clone()], lin(0.0, 1.0, 3), |x, _| x[0]).unwrap();
        let radii = [0.5, 0.75, 1.0, 1.5, 2.0];
        let w = partial_modulus_values(&f, &radii, None);
        for (r, v) in radii.iter().zip(&w) {
            assert!((v - brute(&f, *r)).abs() < 1e-15);
        }
        assert_eq!(*w.last().unwrap(), 1.0);
    }

    #[test]
    fn time_only_field_has_zero_modulus() {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        let g = lin(-1.0, 1.0, 5);
        let f = SampledField::from_fn(&s, vec![g.clone(), g], lin(0.0, 1.0, 4), |_, t| (7.0 * t).sin()).unwrap();
        let w = empirical_modulus(&f, &[0.8, 1.6]).unwrap();
        assert_eq!(w.eval(1.0), 0.0);
    }

    #[test]
    fn radii_below_resolution_rejected() {
        let s = ModelStructure::build(&[1], None).unwrap();
        let f = SampledField::from_fn(&s, vec![lin(0.0, 1.0, 11)], vec![0.0], |x, _| x[0]).unwrap();
        assert!(matches!(empirical_modulus(&f, &[0.01, 0.5]), Err(KfpError::Grid(_))));
    }
}
