//! Best-constant checks of the global space and space-time continuity
//! estimates and of the interpolation inequality, on manufactured solutions.

use rand::Rng;
use rayon::prelude::*;

use super::fields::{
    coefficient_modulus, holder_seminorms, index_product, modulus_table, radii, resolution, scaled_range,
    sub_lattice, tabulated_m, GridLevel, PointCloud, Table, TimeShifts,
};
use super::Scenario;
use crate::error::{KfpError, Result};
use crate::geometry::GroupPoint;
use crate::moduli::{
    dini_integral, empirical_modulus, log_dini_integral, partial_modulus_values, u_mu_transform, Modulus,
    SampledField,
};
use crate::report::{dyadic_scales, max_ratio, relative_change, two_level_fit, EstimateReport};
use crate::representation::ManufacturedSolution;
use crate::rng;

/// Closed-form fields of `u` on a grid level.
struct Fields {
    u: SampledField,
    /// `D^2_{hk} u`, `h, k < q`, row-major.
    d2: Vec<SampledField>,
    yu: SampledField,
    lu: SampledField,
}

fn sample(sc: &Scenario, u: &ManufacturedSolution, lvl: &GridLevel) -> Result<Fields> {
    let s = &sc.structure;
    let q = s.q();
    let m = &sc.coefficients;
    let f = |g: &(dyn Fn(&[f64], f64) -> f64 + Sync)| SampledField::from_fn(s, lvl.x.clone(), lvl.t.clone(), g);
    let mut d2 = Vec::with_capacity(q * q);
    for h in 0..q {
        for k in 0..q {
            d2.push(f(&|x: &[f64], t| u.hessian(x, t)[(h, k)])?);
        }
    }
    Ok(Fields {
        u: f(&|x: &[f64], t| u.value(x, t))?,
        d2,
        yu: f(&|x: &[f64], t| u.yu(s, x, t))?,
        lu: f(&|x: &[f64], t| u.lu(m, x, t))?,
    })
}

/// `||f||_D = sup |f| + int_0^1 omega_f(r)/r dr` with the tabulated empirical modulus.
fn dini_norm(f: &SampledField, w: &Modulus) -> Result<f64> {
    let d = dini_integral(w)?;
    if !d.is_finite() {
        return Err(KfpError::Divergent);
    }
    Ok(f.sup_abs() + d)
}

struct SpaceFit {
    c_i: f64,
    c_ii: f64,
    scale: f64,
    lhs_ii: Vec<f64>,
    rhs_ii: Vec<f64>,
    d_norm: f64,
}

fn space_fit(sc: &Scenario, u: &ManufacturedSolution, lvl: &GridLevel, radii: &[f64]) -> Result<SpaceFit> {
    let s = &sc.structure;
    let q = s.q();
    let alpha = sc.alpha;
    let f = sample(sc, u, lvl)?;
    let w_lu = empirical_modulus(&f.lu, radii)?;
    let d_norm = dini_norm(&f.lu, &w_lu)? + f.u.sup_abs();

    // (i): sup norms of second-order terms plus full Hoelder norms of u and D_i u
    let (xs, ts) = sub_lattice(lvl, sc.grids.holder_points);
    let pts = index_product(&xs);
    let mut cloud = PointCloud { x: Vec::new(), ti: Vec::new(), fields: vec![Vec::new(); q + 1] };
    for &ti in &ts {
        for mi in &pts {
            let x: Vec<f64> = mi.iter().enumerate().map(|(a, &i)| lvl.x[a][i]).collect();
            let t = lvl.t[ti];
            cloud.fields[0].push(u.value(&x, t));
            let g = u.grad(&x, t);
            for i in 0..q {
                cloud.fields[i + 1].push(g[i]);
            }
            cloud.x.push(x);
            cloud.ti.push(ti);
        }
    }
    let shifts = TimeShifts::new(s, &lvl.t);
    let semi = holder_seminorms(s, &shifts, &cloud, alpha);
    let sups: Vec<f64> = cloud.fields.iter().map(|v| v.iter().fold(0.0f64, |m, x| m.max(x.abs()))).collect();
    let lhs_i = f.d2.iter().map(|g| g.sup_abs()).sum::<f64>()
        + f.yu.sup_abs()
        + sups.iter().zip(&semi).map(|(a, b)| a + b).sum::<f64>();
    let c_i = max_ratio(&[lhs_i], &[d_norm]);

    // (ii): moduli of D^2 u and Yu against M_{Lu}(cr) + (M_a(cr) + r^alpha) D
    let mut lhs_ii = partial_modulus_values(&f.yu, radii, None);
    for g in &f.d2 {
        for (l, v) in lhs_ii.iter_mut().zip(partial_modulus_values(g, radii, None)) {
            *l += v;
        }
    }
    let scales = dyadic_scales(sc.grids.scale_lo, sc.grids.scale_hi);
    let range = scaled_range(&scales, radii.iter().copied());
    let m_lu = modulus_table(range, |r| w_lu.m(r))?;
    let m_a = match coefficient_modulus(&sc.coefficients) {
        Some(w) => modulus_table(range, move |r| w.m(r))?,
        None => modulus_table(None, |_| Ok(0.0))?,
    };
    let rhs_at = |c: f64| -> Vec<f64> {
        radii
            .iter()
            .map(|&r| m_lu.eval(c * r) + (m_a.eval(c * r) + r.powf(alpha)) * d_norm)
            .collect()
    };
    let (c_ii, scale) = two_level_fit(&lhs_ii, &scales, rhs_at);
    let scale = if scale.is_finite() { scale } else { 1.0 };
    let rhs_ii = rhs_at(scale);
    Ok(SpaceFit { c_i, c_ii, scale, lhs_ii, rhs_ii, d_norm })
}

fn levels(sc: &Scenario) -> (GridLevel, GridLevel) {
    let g = &sc.grids;
    let fine = GridLevel::on(&sc.domain, g.x_points, g.t_points);
    let coarse = GridLevel::on(&sc.domain, g.x_points.div_ceil(2), g.t_points.div_ceil(2));
    (coarse, fine)
}

fn no_solutions(id: &str) -> KfpError {
    KfpError::invalid("scenario", format!("{id} needs at least one manufactured solution"))
}

/// Global estimates (i) and (ii) for every manufactured solution under the
/// scenario coefficients. `c_star` is the larger of the two fitted
/// constants; stability compares the coarse and the configured grid.
pub fn schauder_space_check(sc: &Scenario) -> Result<EstimateReport> {
    if sc.solutions.is_empty() {
        return Err(no_solutions("schauder_space_check"));
    }
    let (coarse, fine) = levels(sc);
    let rs = radii(&sc.structure, &sc.domain, resolution(&sc.structure, &coarse), sc.grids.radii);
    let mut rep = EstimateReport::new(
        "schauder_space",
        "(i) ||Lu||_D + ||u||_inf; (ii) M_Lu(cr) + (M_a(cr) + r^alpha)(||Lu||_D + ||u||_inf)",
    );
    let (mut c_fine, mut c_coarse) = (0.0f64, 0.0f64);
    let (mut ci, mut cii) = (0.0f64, 0.0f64);
    let mut curve = None;
    for u in &sc.solutions {
        let a = space_fit(sc, u, &coarse, &rs)?;
        let b = space_fit(sc, u, &fine, &rs)?;
        c_coarse = c_coarse.max(a.c_i.max(a.c_ii));
        let cb = b.c_i.max(b.c_ii);
        if curve.is_none() || cb > c_fine {
            rep.extra.insert("inner_scale".into(), b.scale);
            rep.extra.insert("d_norm".into(), b.d_norm);
            curve = Some((b.lhs_ii.clone(), b.rhs_ii.clone()));
        }
        c_fine = c_fine.max(cb);
        ci = ci.max(b.c_i);
        cii = cii.max(b.c_ii);
    }
    let (l, r) = curve.unwrap();
    rep = rep.with_samples(l, r).with_abscissa(rs.clone()).with_seed(sc.seed);
    rep.c_star = c_fine;
    rep.stability = relative_change(c_fine, c_coarse);
    rep.extra.insert("c_i".into(), ci);
    rep.extra.insert("c_ii".into(), cii);
    rep.extra.insert("c_star_coarse".into(), c_coarse);
    rep = rep.with_grid_hash(&[fine.hash_parts(), rs].concat());
    Ok(rep.judge(sc.tolerances.ceiling, sc.tolerances.stability))
}

/// Tables of the transforms entering the space-time estimate.
struct TimeRhs {
    m_u: Table,
    n_lu: Table,
    n_a: Table,
    u_u: Table,
    v_lu: Table,
    v_a: Table,
    d_norm: f64,
}

fn time_rhs(sc: &Scenario, u: &ManufacturedSolution, lvl: &GridLevel, rs: &[f64], r_range: Option<(f64, f64)>, dt_range: Option<(f64, f64)>) -> Result<TimeRhs> {
    let s = &sc.structure;
    let mu = sc.mu;
    let f = sample(sc, u, lvl)?;
    let w_u = empirical_modulus(&f.u, rs)?;
    let w_lu = empirical_modulus(&f.lu, rs)?;
    if !log_dini_integral(&w_lu)?.is_finite() {
        return Err(KfpError::invalid("sources", "L u is not partially log-Dini on the grid"));
    }
    let d_norm = dini_norm(&f.lu, &w_lu)? + f.u.sup_abs();
    let mm_lu = tabulated_m(&w_lu, 1e-8, 1e4)?;
    let zero = || modulus_table(None, |_| Ok(0.0));
    let (n_a, v_a) = match coefficient_modulus(&sc.coefficients) {
        Some(w) => {
            let mm = w.m_modulus()?;
            (modulus_table(r_range, |r| mm.m(r))?, modulus_table(dt_range, |r| u_mu_transform(&mm, mu, r, s))?)
        }
        None => (zero()?, zero()?),
    };
    let m_u = modulus_table(r_range, |r| w_u.m(r))?;
    let n_lu = modulus_table(r_range, |r| mm_lu.m(r))?;
    let u_u = modulus_table(dt_range, |r| u_mu_transform(&w_u, mu, r, s))?;
    let v_lu = modulus_table(dt_range, |r| u_mu_transform(&mm_lu, mu, r, s))?;
    Ok(TimeRhs { m_u, n_lu, n_a, u_u, v_lu, v_a, d_norm })
}

/// A sampled pair of grid points.
struct Pair {
    x1: Vec<f64>,
    t1: f64,
    x2: Vec<f64>,
    t2: f64,
    r: f64,
    dt: f64,
}

/// Pairs of points of `lvl`: a third share the time, a third the position.
fn sample_pairs(sc: &Scenario, lvl: &GridLevel, count: usize) -> Vec<Pair> {
    let s = &sc.structure;
    let qn = s.max_exponent() as f64;
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let mut g = rng::stream(sc.seed, "schauder_time_pairs", k);
            let pick_x = |g: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                lvl.x.iter().map(|ax| ax[g.random_range(0..ax.len())]).collect()
            };
            let x1 = pick_x(&mut g);
            let t1 = lvl.t[g.random_range(0..lvl.t.len())];
            let (x2, t2) = match k % 3 {
                0 => (pick_x(&mut g), t1),
                1 => (x1.clone(), lvl.t[g.random_range(0..lvl.t.len())]),
                _ => (pick_x(&mut g), lvl.t[g.random_range(0..lvl.t.len())]),
            };
            let dt = (t1 - t2).abs();
            let d = s.quasi_distance(&GroupPoint::from_slice(&x1, t1), &GroupPoint::from_slice(&x2, t2));
            Pair { r: d + dt.powf(1.0 / qn), dt, x1, t1, x2, t2 }
        })
        .collect()
}

/// Space-time estimate of `D^2 u` for every manufactured solution; the
/// left side is `sum_{i,j<q} |D^2_ij u(x1,t1) - D^2_ij u(x2,t2)|` at grid
/// pairs, the right side uses `M, N, U^mu, V^mu` of the grid moduli.
pub fn schauder_time_check(sc: &Scenario) -> Result<EstimateReport> {
    if sc.solutions.is_empty() {
        return Err(no_solutions("schauder_time_check"));
    }
    let s = &sc.structure;
    let q = s.q();
    let alpha = sc.alpha;
    let (coarse, fine) = levels(sc);
    let rs = radii(s, &sc.domain, resolution(s, &coarse), sc.grids.radii);
    let pairs = sample_pairs(sc, &fine, sc.grids.pairs);
    let scales = dyadic_scales(sc.grids.scale_lo, sc.grids.scale_hi);
    let r_range = scaled_range(&scales, pairs.iter().map(|p| p.r));
    let dt_range = scaled_range(&scales, pairs.iter().map(|p| p.dt.sqrt()));
    let mut rep = EstimateReport::new(
        "schauder_time",
        "M_u(cr) + N_Lu(cr) + (N_a(cr) + r^alpha) D + U_u(c sqrt dt) + V_Lu(c sqrt dt) + (V_a(c sqrt dt) + dt^(alpha/2)) D",
    );
    let (mut c_fine, mut c_coarse) = (0.0f64, 0.0f64);
    let mut same_t = 0.0f64;
    for u in &sc.solutions {
        let lhs: Vec<f64> = pairs
            .par_iter()
            .map(|p| {
                let (h1, h2) = (u.hessian(&p.x1, p.t1), u.hessian(&p.x2, p.t2));
                (0..q).flat_map(|i| (0..q).map(move |j| (i, j))).map(|(i, j)| (h1[(i, j)] - h2[(i, j)]).abs()).sum()
            })
            .collect();
        let mut fits = Vec::new();
        for lvl in [&coarse, &fine] {
            let tr = time_rhs(sc, u, lvl, &rs, r_range, dt_range)?;
            let rhs_at = |c: f64| -> Vec<f64> {
                pairs
                    .iter()
                    .map(|p| {
                        let (cr, cs) = (c * p.r, c * p.dt.sqrt());
                        tr.m_u.eval(cr)
                            + tr.n_lu.eval(cr)
                            + (tr.n_a.eval(cr) + p.r.powf(alpha)) * tr.d_norm
                            + tr.u_u.eval(cs)
                            + tr.v_lu.eval(cs)
                            + (tr.v_a.eval(cs) + p.dt.powf(0.5 * alpha)) * tr.d_norm
                    })
                    .collect()
            };
            let (c, scale) = two_level_fit(&lhs, &scales, rhs_at);
            let rhs = rhs_at(if scale.is_finite() { scale } else { 1.0 });
            let st: Vec<usize> = (0..pairs.len()).filter(|&k| pairs[k].dt == 0.0).collect();
            let same = max_ratio(
                &st.iter().map(|&k| lhs[k]).collect::<Vec<_>>(),
                &st.iter().map(|&k| rhs[k]).collect::<Vec<_>>(),
            );
            fits.push((c, scale, rhs, same));
        }
        let (cf, scale, rhs, same) = fits.pop().unwrap();
        let (cc, ..) = fits.pop().unwrap();
        c_coarse = c_coarse.max(cc);
        if cf >= c_fine {
            rep = rep.with_samples(lhs.clone(), rhs);
            rep.extra.insert("inner_scale".into(), scale);
        }
        c_fine = c_fine.max(cf);
        same_t = same_t.max(same);
    }
    rep = rep.with_seed(sc.seed);
    rep.c_star = c_fine;
    rep.stability = relative_change(c_fine, c_coarse);
    rep.extra.insert("c_star_coarse".into(), c_coarse);
    rep.extra.insert("same_time_ratio".into(), same_t);
    rep = rep.with_grid_hash(&[fine.hash_parts(), rs].concat());
    Ok(rep.judge(sc.tolerances.ceiling, sc.tolerances.stability))
}

/// Points of `B_rad(center)` intersected with `t <= T`, drawn by rejection
/// from the anisotropic box that contains the ball.
fn ball_points(sc: &Scenario, center: &GroupPoint, rad: f64, count: usize, stream: u64) -> Vec<GroupPoint> {
    let s = &sc.structure;
    let t_end = sc.domain.t.1;
    let mut g = rng::stream(sc.seed, "interpolation_ball", stream);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count && tries < 1000 * count {
        tries += 1;
        let t = center.t + rad * rad * g.random_range(-1.0..1.0);
        if t > t_end {
            continue;
        }
        // x - E(t - t0) x0 has i-th entry of size at most rad^{q_i}
        let e = s.exp_neg_tb(t - center.t);
        let base = &e * &center.x;
        let x: Vec<f64> = (0..s.dim())
            .map(|i| base[i] + rad.powi(s.exponents()[i] as i32) * g.random_range(-1.0..1.0))
            .collect();
        let p = GroupPoint::from_slice(&x, t);
        if s.quasi_distance(&p, center) < rad {
            out.push(p);
        }
    }
    out
}

struct BallStats {
    /// `sum_h ||D_h u||_{C^alpha(B_r)} + ||u||_{C^alpha(B_r)}`.
    lower: f64,
    /// `sum ||D^2 u||_inf + ||Yu||_inf` on `B_4r`.
    second: f64,
    /// `||u||_inf` on `B_4r`.
    sup: f64,
}

fn ball_stats(sc: &Scenario, u: &ManufacturedSolution, center: &GroupPoint, rad: f64, count: usize, k: u64) -> BallStats {
    let s = &sc.structure;
    let q = s.q();
    let inner = ball_points(sc, center, rad, count, 2 * k);
    let outer = ball_points(sc, center, 4.0 * rad, count, 2 * k + 1);
    let mut vals: Vec<Vec<f64>> = vec![Vec::with_capacity(inner.len()); q + 1];
    for p in inner.iter().chain(std::iter::once(center)) {
        let x = p.x.as_slice();
        vals[0].push(u.value(x, p.t));
        let g = u.grad(x, p.t);
        for i in 0..q {
            vals[i + 1].push(g[i]);
        }
    }
    let pts: Vec<&GroupPoint> = inner.iter().chain(std::iter::once(center)).collect();
    let mut lower = 0.0;
    for f in &vals {
        let mut semi = 0.0f64;
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                let d = s.quasi_distance(pts[a], pts[b]);
                if d > 0.0 {
                    semi = semi.max((f[a] - f[b]).abs() / d.powf(sc.alpha));
                }
            }
        }
        lower += f.iter().fold(0.0f64, |m, v| m.max(v.abs())) + semi;
    }
    let (mut second, mut sup) = (0.0f64, 0.0f64);
    let mut d2 = vec![0.0f64; q * q];
    let mut yu = 0.0f64;
    for p in outer.iter().chain(std::iter::once(center)) {
        let x = p.x.as_slice();
        let h = u.hessian(x, p.t);
        for i in 0..q {
            for j in 0..q {
                d2[i * q + j] = d2[i * q + j].max(h[(i, j)].abs());
            }
        }
        yu = yu.max(u.yu(s, x, p.t).abs());
        sup = sup.max(u.value(x, p.t).abs());
    }
    second += d2.iter().sum::<f64>() + yu;
    BallStats { lower, second, sup }
}

/// Smallest `c(gamma) = max eps^gamma (A - eps B)_+ / U` over balls and `eps`.
fn interpolation_constant(stats: &[BallStats], epsilons: &[f64], gamma: f64) -> f64 {
    let mut c = 0.0f64;
    for b in stats {
        for &e in epsilons {
            let gap = b.lower - e * b.second;
            if gap <= 0.0 {
                continue;
            }
            if b.sup <= 0.0 {
                return f64::INFINITY;
            }
            c = c.max(e.powf(gamma) * gap / b.sup);
        }
    }
    c
}

/// Candidate exponents for the interpolation fit.
const GAMMAS: [f64; 6] = [1.05, 1.25, 1.5, 2.0, 3.0, 4.0];

fn interpolation_fit(stats: &[BallStats], epsilons: &[f64]) -> (f64, f64) {
    let e_min = epsilons.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut best = (f64::INFINITY, GAMMAS[0], f64::INFINITY);
    for &g in &GAMMAS {
        let c = interpolation_constant(stats, epsilons, g);
        // tightness of the bound at the smallest epsilon
        let cost = c * e_min.powf(-g);
        if cost < best.2 {
            best = (c, g, cost);
        }
    }
    (best.0, best.1)
}

/// Interpolation inequality on balls `B_r^T(xi)` of radius `rad` centred at
/// sampled grid points, fitting `(c, gamma)` over `epsilons`. Stability
/// compares `n` and `2n` points per ball.
pub fn interpolation_check(sc: &Scenario, epsilons: &[f64], rad: f64) -> Result<EstimateReport> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(KfpError::invalid("epsilons", "need a non-empty list in (0,1)"));
    }
    if !(rad > 0.0) {
        return Err(KfpError::invalid("rad", "must be > 0"));
    }
    if sc.solutions.is_empty() {
        return Err(no_solutions("interpolation_check"));
    }
    let centers: Vec<GroupPoint> = (0..8u64)
        .map(|k| {
            let mut g = rng::stream(sc.seed, "interpolation_centers", k);
            let x: Vec<f64> = sc.domain.x.iter().map(|&(a, b)| g.random_range(a..b)).collect();
            GroupPoint::from_slice(&x, g.random_range(sc.domain.t.0..sc.domain.t.1))
        })
        .collect();
    let n = 150usize;
    let mut fits = Vec::new();
    for count in [n, 2 * n] {
        let stats: Vec<BallStats> = sc
            .solutions
            .iter()
            .flat_map(|u| centers.iter().enumerate().map(move |(k, c)| (u, k, c)))
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&(u, k, c)| ball_stats(sc, u, c, rad, count, k as u64))
            .collect();
        fits.push(interpolation_fit(&stats, epsilons));
    }
    let (c1, g1) = fits[1];
    let (c0, _) = fits[0];
    let mut rep = EstimateReport::new("interpolation", "eps (sum ||D^2 u|| + ||Yu||) + c eps^-gamma ||u||").with_seed(sc.seed);
    rep.c_star = c1;
    rep.stability = relative_change(c1, c0);
    rep.samples = centers.len() * sc.solutions.len();
    rep.extra.insert("gamma".into(), g1);
    rep.extra.insert("radius".into(), rad);
    rep = rep.with_grid_hash(&[epsilons, &[rad]].concat());
    Ok(rep.judge(sc.tolerances.ceiling, sc.tolerances.stability))
}
