//! Monte-Carlo check of the dyadic integral bounds
//!
//! `int_{d > r} omega(g d)/d^{Q+3} <= c int_{2r}^inf omega(g s)/s^2 ds`,
//! `int_{d < r} omega(g d)/d^{Q+2} <= c int_0^{2r} omega(g s)/s ds`.
//!
//! Points `eta` are generated from samples `w` of the unit shell
//! `{1/2 <= rho < 1}` so that `eta^{-1} o xi = D(lambda) w`; every dyadic
//! shell around `xi` reuses the same samples.

use rand::Rng;

use super::Modulus;
use crate::error::{KfpError, Result};
use crate::geometry::{GroupPoint, ModelStructure};
use crate::quadrature::{CompensatedSum, HalfLine};
use crate::report::{relative_change, EstimateReport};
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub struct DyadicOptions {
    pub samples: usize,
    pub seed: u64,
    /// Largest admissible relative standard error of either integral.
    pub max_rel_se: f64,
    pub max_shells: usize,
}

impl Default for DyadicOptions {
    fn default() -> Self {
        Self { samples: 20_000, seed: 1, max_rel_se: 0.05, max_shells: 1000 }
    }
}

struct ShellSums {
    outside: f64,
    inside: f64,
    se_out: f64,
    se_in: f64,
}

fn shell_integrals(
    w: &Modulus,
    s: &ModelStructure,
    xi: &GroupPoint,
    r: f64,
    gamma: f64,
    opts: &DyadicOptions,
    n: usize,
) -> ShellSums {
    let mut rng = rng::stream(opts.seed, "dyadic", 0);
    let dim = s.dim();
    let q = s.hom_dim() as i32;
    let box_vol = 2f64.powi(dim as i32 + 1);
    let mut out = (CompensatedSum::new(), 0.0);
    let mut ins = (CompensatedSum::new(), 0.0);
    let mut x = vec![0.0; dim];
    for _ in 0..n {
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let t: f64 = rng.random_range(-1.0..1.0);
        let rho = s.norm_x(&x) + t.abs().sqrt();
        if !(0.5..1.0).contains(&rho) {
            continue;
        }
        // eta with x_xi - E(t_xi - s) y = D(lambda) w_x and t_xi - s = lambda^2 w_t,
        // evaluated at lambda = 1; other shells follow by homogeneity.
        let eta_s = xi.t - t;
        let wx = nalgebra::DVector::from_column_slice(&x);
        let y = s.exp_neg_tb(eta_s - xi.t) * (&xi.x - wx);
        let d = s.quasi_distance(xi, &GroupPoint::new(y, eta_s));
        let mut a = CompensatedSum::new();
        let mut b = CompensatedSum::new();
        for j in 0..opts.max_shells {
            let lam_out = r * 2f64.powi(j as i32 + 1);
            let term = w.eval(gamma * lam_out * d) / (lam_out * d.powi(q + 3));
            a.add(term);
            let lam_in = r * 2f64.powi(-(j as i32));
            let tb = w.eval(gamma * lam_in * d) / d.powi(q + 2);
            b.add(tb);
            if term <= 1e-16 * a.value() && tb <= 1e-16 * b.value() && j > 4 {
                break;
            }
        }
        let ya = box_vol * a.value();
        let yb = box_vol * b.value();
        out.0.add(ya);
        out.1 += ya * ya;
        ins.0.add(yb);
        ins.1 += yb * yb;
    }
    let nf = n as f64;
    let se = |sum: f64, sq: f64| {
        let m = sum / nf;
        ((sq / nf - m * m).max(0.0) / nf).sqrt()
    };
    ShellSums {
        outside: out.0.value() / nf,
        inside: ins.0.value() / nf,
        se_out: se(out.0.value(), out.1),
        se_in: se(ins.0.value(), ins.1),
    }
}

fn fit(w: &Modulus, sums: &ShellSums, r: f64, gamma: f64) -> Result<(f64, f64, f64, f64)> {
    let rhs_a = gamma * w.upper(2.0 * r * gamma)?;
    let rhs_b = match w.phi(2.0 * r * gamma)? {
        HalfLine::Finite(v) => v,
        _ => return Err(KfpError::Divergent),
    };
    let ratio = |l: f64, rr: f64| if l <= 0.0 { 0.0 } else if rr > 0.0 { l / rr } else { f64::INFINITY };
    Ok((ratio(sums.outside, rhs_a), ratio(sums.inside, rhs_b), rhs_a, rhs_b))
}

/// Fits the smallest `c` valid for both bounds; the stability entry compares
/// the fit at `samples` with the fit at twice as many samples.
pub fn dyadic_bounds_check(
    w: &Modulus,
    s: &ModelStructure,
    xi: &GroupPoint,
    r: f64,
    gamma: f64,
    opts: &DyadicOptions,
) -> Result<EstimateReport> {
    if !(r > 0.0) || !(gamma > 0.0) {
        return Err(KfpError::invalid("r, gamma", "must be > 0"));
    }
    if !w.dini()?.is_finite() {
        return Err(KfpError::Divergent);
    }
    let coarse = shell_integrals(w, s, xi, r, gamma, opts, opts.samples);
    let fine = shell_integrals(w, s, xi, r, gamma, opts, 2 * opts.samples);
    for (v, se) in [(fine.outside, fine.se_out), (fine.inside, fine.se_in)] {
        if v > 0.0 && se / v > opts.max_rel_se {
            return Err(KfpError::MonteCarlo(format!(
                "relative standard error {} above {}",
                se / v,
                opts.max_rel_se
            )));
        }
    }
    let (ca0, cb0, _, _) = fit(w, &coarse, r, gamma)?;
    let (ca, cb, rhs_a, rhs_b) = fit(w, &fine, r, gamma)?;
    let c_coarse = ca0.max(cb0);
    let c = ca.max(cb);
    let mut rep = EstimateReport::new("dyadic_bounds", "c int omega(gamma s) s^-2 | c int omega(gamma s) s^-1")
        .with_samples(vec![fine.outside, fine.inside], vec![rhs_a, rhs_b])
        .with_seed(opts.seed)
        .with_extra("c_outside", ca)
        .with_extra("c_inside", cb)
        .with_extra("se_outside", fine.se_out)
        .with_extra("se_inside", fine.se_in)
        .with_grid_hash(&[r, gamma, opts.samples as f64]);
    rep.c_star = c;
    rep.stability = relative_change(c, c_coarse);
    Ok(rep.judge(f64::INFINITY, 0.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_modulus_gives_zero_constant() {
        let s = ModelStructure::build(&[1, 1], None).unwrap();
        let rep = dyadic_bounds_check(
            &Modulus::zero(),
            &s,
            &GroupPoint::origin(2),
            0.5,
            1.0,
            &DyadicOptions { samples: 2000, ..Default::default() },
        )
        .unwrap();
        assert_eq!(rep.c_star, 0.0);
        assert!(rep.pass);
    }
}
