//! Sup and modulus bounds of the singular operator `T_ij`, and the
//! estimates for `D^2 u`, `Yu` under time-only coefficients, with `D^2 u`
//! computed by `T_ij` on nested grids.

use rayon::prelude::*;

use super::fields::{axis, modulus_table, radii, scaled_range, GridLevel, TimeShifts};
use super::Scenario;
use crate::error::{KfpError, Result};
use crate::kernel::CoefficientModel;
use crate::moduli::{partial_modulus_values, u_mu_transform, SampledField};
use crate::report::{dyadic_scales, max_ratio, relative_change, two_level_fit, EstimateReport};
use crate::representation::{repr_field, ReprKind, SourceSpec};

/// `T_ij g` for one source on the fine grid of a sweep; the coarse grid is
/// every other point of it.
#[derive(Debug, Clone)]
pub struct HessianSweep {
    pub source: String,
    pub fine: GridLevel,
    /// `T_ij g` for `i, j < q`, row-major in `(i, j)`.
    pub d2: Vec<SampledField>,
    /// `g` on the same grid.
    pub g: SampledField,
    pub max_error_estimate: f64,
}

fn sweep_levels(sc: &Scenario) -> GridLevel {
    let n = 2 * sc.grids.repr_x_points - 1;
    let (tau, t_end) = sc.domain.t;
    let m = sc.grids.repr_t_points;
    GridLevel {
        x: sc.domain.x.iter().map(|&(a, b)| axis(a, b, n)).collect(),
        t: (1..=m).map(|k| tau + (t_end - tau) * k as f64 / m as f64).collect(),
    }
}

fn sweep(sc: &Scenario, model: &CoefficientModel, src: &SourceSpec) -> Result<HessianSweep> {
    let s = &sc.structure;
    let q = s.q();
    let fine = sweep_levels(sc);
    let xs = fine.points();
    let pts: Vec<(Vec<f64>, f64)> = fine.t.iter().flat_map(|&t| xs.iter().map(move |x| (x.clone(), t))).collect();
    let mut d2: Vec<SampledField> = Vec::with_capacity(q * q);
    let mut err = 0.0f64;
    for i in 0..q {
        for j in 0..q {
            if j < i {
                // symmetric in (i, j)
                let v = d2[j * q + i].clone();
                d2.push(v);
                continue;
            }
            let vals = repr_field(model, src, ReprKind::Hessian(i, j), &pts, &sc.repr)?;
            err = vals.iter().fold(err, |m, v| m.max(v.error_estimate));
            d2.push(SampledField::new(s, fine.x.clone(), fine.t.clone(), vals.iter().map(|v| v.value).collect())?);
        }
    }
    let g = SampledField::from_fn(s, fine.x.clone(), fine.t.clone(), |x, t| src.eval(x, t))?;
    Ok(HessianSweep { source: src.name.clone(), fine, d2, g, max_error_estimate: err })
}

/// Sweeps of every analytic source under the time-only part of the
/// coefficients, computed once per scenario.
pub fn hessian_sweeps(sc: &Scenario) -> Result<&[HessianSweep]> {
    if let Some(v) = sc.sweeps.get() {
        return Ok(v);
    }
    let model = sc.coefficients.without_perturbation();
    let v = sc.sources.iter().map(|src| sweep(sc, &model, src)).collect::<Result<Vec<_>>>()?;
    let _ = sc.sweeps.set(v);
    Ok(sc.sweeps.get().unwrap())
}

/// Every other grid point of a fine sweep grid.
fn coarsen(f: &SampledField) -> Result<SampledField> {
    let s = f.structure();
    let xg: Vec<Vec<f64>> = f.x_grids().iter().map(|g| g.iter().step_by(2).copied().collect()).collect();
    let sizes: Vec<usize> = f.x_grids().iter().map(|g| g.len()).collect();
    let n_x = f.n_x();
    let mut values = Vec::new();
    for ti in 0..f.t_grid().len() {
        for xi in 0..n_x {
            let mut rem = xi;
            let mut keep = true;
            for &len in sizes.iter().rev() {
                if (rem % len) % 2 == 1 {
                    keep = false;
                }
                rem /= len;
            }
            if keep {
                values.push(f.value(ti, xi));
            }
        }
    }
    SampledField::new(s, xg, f.t_grid().to_vec(), values)
}

fn coarse_resolution(sc: &Scenario) -> f64 {
    let n = sc.grids.repr_x_points;
    sc.domain
        .x
        .iter()
        .zip(sc.structure.exponents())
        .map(|(&(a, b), &q)| ((b - a) / (n - 1) as f64).powf(1.0 / q as f64))
        .fold(f64::INFINITY, f64::min)
}

fn sum_moduli(fields: &[&SampledField], rs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rs.len()];
    for f in fields {
        for (o, v) in out.iter_mut().zip(partial_modulus_values(f, rs, None)) {
            *o += v;
        }
    }
    out
}

fn max_moduli(fields: &[&SampledField], rs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0f64; rs.len()];
    for f in fields {
        for (o, v) in out.iter_mut().zip(partial_modulus_values(f, rs, None)) {
            *o = o.max(v);
        }
    }
    out
}

/// `U^mu_g(sqrt(T - tau))` with the declared modulus of `g`.
fn u_bound(sc: &Scenario, src: &SourceSpec) -> Result<f64> {
    let span = (sc.domain.t.1 - sc.domain.t.0).sqrt();
    if src.modulus.eval(1.0) == 0.0 && src.modulus.omega0() == 0.0 {
        return Ok(0.0);
    }
    u_mu_transform(&src.modulus, sc.mu, span, &sc.structure)
}

/// Modulus fit `lhs(r) <= c M_g(c r)` with the declared modulus of `g`.
fn modulus_fit(sc: &Scenario, src: &SourceSpec, lhs: &[f64], rs: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
    let scales = dyadic_scales(sc.grids.scale_lo, sc.grids.scale_hi);
    let w = &src.modulus;
    let tab = modulus_table(scaled_range(&scales, rs.iter().copied()), |r| w.m(r))?;
    let rhs_at = |c: f64| rs.iter().map(|&r| tab.eval(c * r)).collect::<Vec<f64>>();
    let (c, scale) = two_level_fit(lhs, &scales, rhs_at);
    let scale = if scale.is_finite() { scale } else { 1.0 };
    Ok((c, scale, rhs_at(scale)))
}

fn sup_of(fields: &[&SampledField]) -> f64 {
    fields.iter().map(|f| f.sup_abs()).fold(0.0, f64::max)
}

/// For every analytic source: `max_ij ||T_ij g||_inf <= c U^mu_g(sqrt(T-tau))`
/// and `max_ij omega_{T_ij g}(r) <= c M_g(c r)`, each with the relative
/// change of `c_star` between the coarse and the fine sweep grid.
pub fn singular_bounds_check(sc: &Scenario) -> Result<Vec<EstimateReport>> {
    let sweeps = hessian_sweeps(sc)?;
    let rs = radii(&sc.structure, &sc.domain, coarse_resolution(sc), sc.grids.radii);
    let mut out = Vec::new();
    for (sw, src) in sweeps.iter().zip(&sc.sources) {
        let coarse: Vec<SampledField> = sw.d2.iter().map(coarsen).collect::<Result<_>>()?;
        let fine: Vec<&SampledField> = sw.d2.iter().collect();
        let coarse: Vec<&SampledField> = coarse.iter().collect();
        let ub = u_bound(sc, src)?;

        let (sf, sc_) = (sup_of(&fine), sup_of(&coarse));
        let mut sup = EstimateReport::new(format!("singular_sup[{}]", src.name), "U^mu_g(sqrt(T - tau))")
            .with_samples(vec![sf], vec![ub])
            .with_seed(sc.seed);
        sup.c_star = max_ratio(&[sf], &[ub]);
        sup.stability = relative_change(sup.c_star, max_ratio(&[sc_], &[ub]));
        sup.extra.insert("quadrature_error".into(), sw.max_error_estimate);
        sup = sup.with_grid_hash(&sw.fine.hash_parts());
        out.push(sup.judge(sc.tolerances.ceiling, sc.tolerances.stability));

        let lf = max_moduli(&fine, &rs);
        let lc = max_moduli(&coarse, &rs);
        let (cf, scale, rhs) = modulus_fit(sc, src, &lf, &rs)?;
        let (cc, ..) = modulus_fit(sc, src, &lc, &rs)?;
        let mut dini = EstimateReport::new(format!("singular_dini[{}]", src.name), "M_g(c r)")
            .with_samples(lf, rhs)
            .with_abscissa(rs.clone())
            .with_seed(sc.seed);
        dini.c_star = cf;
        dini.stability = relative_change(cf, cc);
        dini.extra.insert("inner_scale".into(), scale);
        dini.extra.insert("c_star_coarse".into(), cc);
        dini = dini.with_grid_hash(&[sw.fine.hash_parts(), rs.clone()].concat());
        out.push(dini.judge(sc.tolerances.ceiling, sc.tolerances.stability));
    }
    Ok(out)
}

/// `Yu = g - sum a_ij(t) D^2_ij u` on the sweep grid.
fn drift_field(model: &CoefficientModel, d2: &[&SampledField], g: &SampledField) -> Result<SampledField> {
    let q = model.structure().q();
    let n_x = g.n_x();
    let mut v = Vec::with_capacity(g.values().len());
    for (ti, &t) in g.t_grid().iter().enumerate() {
        let a = model.a0(t);
        for xi in 0..n_x {
            let mut y = g.value(ti, xi);
            for i in 0..q {
                for j in 0..q {
                    y -= a[(i, j)] * d2[i * q + j].value(ti, xi);
                }
            }
            v.push(y);
        }
    }
    SampledField::new(g.structure(), g.x_grids().to_vec(), g.t_grid().to_vec(), v)
}

struct Level<'a> {
    d2: Vec<&'a SampledField>,
    g: &'a SampledField,
}

/// `(c_star, lhs, rhs, sup)`.
type LevelFit = (f64, Vec<f64>, Vec<f64>, f64);

/// `c_star` of (sup, modulus) for the Hessian and the drift at one level.
fn operator_level(sc: &Scenario, src: &SourceSpec, lv: &Level, rs: &[f64], ub: f64) -> Result<[LevelFit; 2]> {
    let model = &sc.coefficients;
    let hs: f64 = lv.d2.iter().map(|f| f.sup_abs()).sum();
    let c_hs = max_ratio(&[hs], &[ub]);
    let lh = sum_moduli(&lv.d2, rs);
    let (c_hm, s_h, rh) = modulus_fit(sc, src, &lh, rs)?;
    let y = drift_field(model, &lv.d2, lv.g)?;
    let c_ys = max_ratio(&[y.sup_abs()], &[lv.g.sup_abs() + ub]);
    let ly = partial_modulus_values(&y, rs, None);
    let (c_ym, s_y, ry) = modulus_fit(sc, src, &ly, rs)?;
    Ok([(c_hs.max(c_hm), lh, rh, s_h), (c_ys.max(c_ym), ly, ry, s_y)])
}

/// Space-time pairs over all grid times.
fn spacetime_fit(sc: &Scenario, src: &SourceSpec, d2: &[&SampledField]) -> Result<(f64, f64)> {
    let s = &sc.structure;
    let f0 = d2[0];
    let tg = f0.t_grid();
    let n_x = f0.n_x();
    let qn = s.max_exponent() as f64;
    let mut tt = vec![sc.domain.t.0];
    tt.extend_from_slice(tg);
    let shifts = TimeShifts::new(s, &tt);
    let npts = n_x * tg.len();
    let pts: Vec<Vec<f64>> = (0..n_x).map(|xi| f0.point(xi)).collect();
    // (lhs, r, dt) for all pairs
    let pairs: Vec<(f64, f64, f64)> = (0..npts)
        .into_par_iter()
        .flat_map_iter(|p| {
            let (tp, xp) = (p / n_x, p % n_x);
            let mut buf = vec![0.0; s.dim()];
            let mut v = Vec::new();
            for o in p + 1..npts {
                let (to, xo) = (o / n_x, o % n_x);
                let lhs: f64 = d2.iter().map(|f| (f.value(tp, xp) - f.value(to, xo)).abs()).sum();
                let d = shifts.distance(s, &pts[xp], tp + 1, &pts[xo], to + 1, &mut buf);
                let dt = (tg[tp] - tg[to]).abs();
                v.push((lhs, d + dt.powf(1.0 / qn), dt));
            }
            v
        })
        .collect();
    let scales = dyadic_scales(sc.grids.scale_lo, sc.grids.scale_hi);
    let w = &src.modulus;
    let m_tab = modulus_table(scaled_range(&scales, pairs.iter().map(|p| p.1)), |r| w.m(r))?;
    let mut dts: Vec<f64> = pairs.iter().map(|p| p.2).filter(|&d| d > 0.0).collect();
    dts.sort_by(f64::total_cmp);
    dts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    let uvals: Vec<(f64, f64)> = dts
        .iter()
        .map(|&d| Ok((d, u_mu_transform(w, sc.mu, d.sqrt(), s)?)))
        .collect::<Result<_>>()?;
    let u_at = |dt: f64| -> f64 {
        if dt <= 0.0 {
            return 0.0;
        }
        uvals.iter().min_by(|a, b| (a.0 - dt).abs().total_cmp(&(b.0 - dt).abs())).map_or(0.0, |p| p.1)
    };
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ub: Vec<f64> = pairs.iter().map(|p| u_at(p.2)).collect();
    let rhs_at = |c: f64| pairs.iter().zip(&ub).map(|(p, u)| m_tab.eval(c * p.1) + u).collect::<Vec<f64>>();
    Ok(two_level_fit(&lhs, &scales, rhs_at))
}

/// Estimates for `D^2 u`, `Yu` and space-time pairs of `D^2 u` when
/// `L u = g` with time-only coefficients, `u` given by the representation
/// formula. Three reports per analytic source.
pub fn model_operator_checks(sc: &Scenario) -> Result<Vec<EstimateReport>> {
    if !sc.coefficients.is_time_only() {
        return Err(KfpError::invalid(
            "coefficients",
            "model operator checks need coefficients depending on t only; a spatial perturbation is present",
        ));
    }
    let sweeps = hessian_sweeps(sc)?;
    let rs = radii(&sc.structure, &sc.domain, coarse_resolution(sc), sc.grids.radii);
    let mut out = Vec::new();
    for (sw, src) in sweeps.iter().zip(&sc.sources) {
        let ub = u_bound(sc, src)?;
        let cd2: Vec<SampledField> = sw.d2.iter().map(coarsen).collect::<Result<_>>()?;
        let cg = coarsen(&sw.g)?;
        let fine = Level { d2: sw.d2.iter().collect(), g: &sw.g };
        let coarse = Level { d2: cd2.iter().collect(), g: &cg };
        let f = operator_level(sc, src, &fine, &rs, ub)?;
        let c = operator_level(sc, src, &coarse, &rs, ub)?;
        let names = [
            ("operator_hessian", "sup: U^mu_g(sqrt(T-tau)); modulus: M_g(c r)"),
            ("operator_drift", "sup: ||g||_inf + U^mu_g(sqrt(T-tau)); modulus: M_g(c r)"),
        ];
        for (k, (id, form)) in names.iter().enumerate() {
            let (cf, l, r, scale) = f[k].clone();
            let mut rep = EstimateReport::new(format!("{id}[{}]", src.name), *form)
                .with_samples(l, r)
                .with_abscissa(rs.clone())
                .with_seed(sc.seed);
            rep.c_star = cf;
            rep.stability = relative_change(cf, c[k].0);
            rep.extra.insert("inner_scale".into(), scale);
            rep.extra.insert("c_star_coarse".into(), c[k].0);
            rep = rep.with_grid_hash(&[sw.fine.hash_parts(), rs.clone()].concat());
            out.push(rep.judge(sc.tolerances.ceiling, sc.tolerances.stability));
        }
        let (cf, scale) = spacetime_fit(sc, src, &fine.d2)?;
        let (cc, _) = spacetime_fit(sc, src, &coarse.d2)?;
        let mut rep = EstimateReport::new(
            format!("operator_spacetime[{}]", src.name),
            "M_g(c (d + |t1-t2|^(1/q_N))) + U^mu_g(sqrt|t1-t2|)",
        )
        .with_seed(sc.seed);
        rep.c_star = cf;
        rep.stability = relative_change(cf, cc);
        rep.samples = sw.d2[0].values().len();
        rep.extra.insert("inner_scale".into(), scale);
        rep.extra.insert("c_star_coarse".into(), cc);
        rep = rep.with_grid_hash(&sw.fine.hash_parts());
        out.push(rep.judge(sc.tolerances.ceiling, sc.tolerances.stability));
    }
    Ok(out)
}
