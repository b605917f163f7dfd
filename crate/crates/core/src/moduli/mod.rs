//! Partial moduli of continuity and their transforms.
//!
//! A [`Modulus`] is a non-decreasing `omega: R+ -> R+` with `omega(0+) = 0`
//! and `omega(r) <= omega0 r^alpha` for `r >= 1`. Beyond a start radius the
//! modulus is described by a closed-form [`Tail`], so integrals over
//! `[r, inf)` never need truncation.

mod checks;
mod dyadic;
mod empirical;
mod gauss;

use std::f64::consts::E as EULER;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::quadrature::{integrate, integrate_half_line, HalfLine, HalfLineOptions};

pub use checks::{m_dini_check, m_growth_check, u_mu_bounds_check};
pub use dyadic::{dyadic_bounds_check, DyadicOptions};
pub use empirical::{
    empirical_modulus, grid_resolution, partial_modulus_values, support_locality_check,
    SampledField,
};
pub use gauss::{u_mu_transform, v_mu_transform, GaussianTail};

pub type ModulusFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Lower end of the `v` variable in the double-exponential substitution
/// `s = r exp(-e^v)`.
const V_START: f64 = -40.0;

/// Radii below this are treated as 0 by the quadratures; contributions from
/// there are far below every tolerance in use.
const TINY: f64 = 1e-280;

/// Closed form `coef s^alpha + constant + log_coef ln(s/start)` valid for
/// `s >= start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub start: f64,
    pub coef: f64,
    pub alpha: f64,
    pub constant: f64,
    pub log_coef: f64,
}

impl Tail {
    pub fn power(start: f64, coef: f64, alpha: f64) -> Self {
        Self { start, coef, alpha, constant: 0.0, log_coef: 0.0 }
    }

    pub fn constant(start: f64, value: f64) -> Self {
        Self { start, coef: 0.0, alpha: 0.5, constant: value, log_coef: 0.0 }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coef * s.powf(self.alpha) + self.constant + self.log_coef * (s / self.start).ln()
    }

    /// `int_r^inf tail(s)/s^2 ds` for `r >= start`.
    fn upper(&self, r: f64) -> f64 {
        self.coef * r.powf(self.alpha - 1.0) / (1.0 - self.alpha)
            + self.constant / r
            + self.log_coef * ((r / self.start).ln() + 1.0) / r
    }

    /// `int_a^b tail(s)/s ds` for `start <= a <= b`.
    fn log_integral(&self, a: f64, b: f64) -> f64 {
        let la = (a / self.start).ln();
        let lb = (b / self.start).ln();
        self.coef * (b.powf(self.alpha) - a.powf(self.alpha)) / self.alpha
            + self.constant * (lb - la)
            + 0.5 * self.log_coef * (lb * lb - la * la)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModulusKind {
    Analytic,
    /// Log-spaced `(r, omega)` pairs, interpolated piecewise-linearly in `log r`.
    Tabulated(Vec<(f64, f64)>),
}

/// A continuity modulus of exponent `alpha` with cap `omega0`.
#[derive(Clone)]
pub struct Modulus {
    name: String,
    kind: ModulusKind,
    eval: ModulusFn,
    /// `l -> omega(e^l)`, for moduli that stay visible below the `f64` range.
    log_eval: Option<ModulusFn>,
    alpha: f64,
    omega0: f64,
    tail: Tail,
    breaks: Vec<f64>,
    tol: f64,
    dini: Arc<OnceLock<HalfLine>>,
}

impl fmt::Debug for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Modulus")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .field("omega0", &self.omega0)
            .field("tail", &self.tail)
            .finish()
    }
}

/// JSON form of a bank entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusDoc {
    pub name: String,
    pub kind: String,
    #[serde(default = "half")]
    pub alpha: f64,
    #[serde(default)]
    pub omega0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<[f64; 2]>,
}

fn half() -> f64 {
    0.5
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(KfpError::invalid("alpha", format!("must lie in (0,1), got {alpha}")))
    }
}

impl Modulus {
    /// General analytic modulus; `eval` must agree with `tail` on `[tail.start, inf)`.
    pub fn analytic(
        name: impl Into<String>,
        eval: ModulusFn,
        alpha: f64,
        omega0: f64,
        tail: Tail,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        check_alpha(tail.alpha)?;
        if !(tail.start > 0.0) {
            return Err(KfpError::invalid("tail.start", "must be > 0"));
        }
        Ok(Self {
            name: name.into(),
            kind: ModulusKind::Analytic,
            eval,
            log_eval: None,
            alpha,
            omega0,
            tail,
            breaks: Vec::new(),
            tol: 1e-11,
            dini: Arc::new(OnceLock::new()),
        })
    }

    pub fn zero() -> Self {
        Self::analytic("zero", Arc::new(|_| 0.0), 0.5, 0.0, Tail::power(1.0, 0.0, 0.5)).unwrap()
    }

    /// `omega(r) = omega0 r^alpha` on all of `R+`.
    pub fn power(omega0: f64, alpha: f64) -> Result<Self> {
        if !(omega0 >= 0.0) {
            return Err(KfpError::invalid("omega0", "must be >= 0"));
        }
        Self::analytic(
            format!("power({omega0},{alpha})"),
            Arc::new(move |r: f64| if r > 0.0 { omega0 * r.powf(alpha) } else { 0.0 }),
            alpha,
            omega0,
            Tail::power(1.0, omega0, alpha),
        )
    }

    /// `omega(r) = (1 + |log r|)^{-p}` for `r < 1`, and `1` for `r >= 1`.
    /// Dini for `p > 1`, log-Dini for `p > 2`.
    pub fn log_power(p: f64) -> Result<Self> {
        if !(p > 0.0) {
            return Err(KfpError::invalid("p", "must be > 0"));
        }
        Self::analytic(
            format!("log_power({p})"),
            Arc::new(move |r: f64| {
                if r <= 0.0 {
                    0.0
                } else if r < 1.0 {
                    (1.0 - r.ln()).powf(-p)
                } else {
                    1.0
                }
            }),
            0.5,
            1.0,
            Tail::constant(1.0, 1.0),
        )
        .map(|m| m.with_log_eval(Arc::new(move |l: f64| if l < 0.0 { (1.0 - l).powf(-p) } else { 1.0 })))
    }

    /// Attaches `l -> omega(e^l)`; it must agree with `eval`.
    pub fn with_log_eval(mut self, f: ModulusFn) -> Self {
        self.log_eval = Some(f);
        self
    }

    /// Tabulated modulus. Values are clamped to their running maximum; below
    /// the first radius the modulus decays linearly to 0, beyond the last it
    /// is constant.
    pub fn tabulated(
        name: impl Into<String>,
        grid: &[(f64, f64)],
        alpha: f64,
        omega0: Option<f64>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if grid.is_empty() {
            return Err(KfpError::Grid("empty modulus table".into()));
        }
        if grid.iter().any(|&(r, w)| !(r > 0.0) || !w.is_finite() || w < 0.0)
            || grid.windows(2).any(|p| !(p[1].0 > p[0].0))
        {
            return Err(KfpError::Grid(
                "modulus table needs increasing positive radii and finite non-negative values".into(),
            ));
        }
        let mut run = 0.0f64;
        let table: Vec<(f64, f64)> = grid
            .iter()
            .map(|&(r, w)| {
                run = run.max(w);
                (r, run)
            })
            .collect();
        let w_max = run;
        let omega0 = match omega0 {
            Some(w0) => {
                for &(r, w) in table.iter().filter(|p| p.0 >= 1.0) {
                    if w > w0 * r.powf(alpha) * (1.0 + 1e-12) {
                        return Err(KfpError::invalid(
                            "omega0",
                            format!("table value {w} at r = {r} exceeds omega0 r^alpha"),
                        ));
                    }
                }
                if w_max > w0 * table.last().unwrap().0.max(1.0).powf(alpha) * (1.0 + 1e-12) {
                    return Err(KfpError::invalid("omega0", "constant tail exceeds omega0 r^alpha"));
                }
                w0
            }
            None => w_max,
        };
        let (r_last, w_last) = *table.last().unwrap();
        let lr: Vec<f64> = table.iter().map(|p| p.0.ln()).collect();
        let ws: Vec<f64> = table.iter().map(|p| p.1).collect();
        let (r0, w0) = table[0];
        let eval: ModulusFn = Arc::new(move |r: f64| {
            if r <= 0.0 {
                0.0
            } else if r <= r0 {
                w0 * r / r0
            } else if r >= r_last {
                w_last
            } else {
                let l = r.ln();
                let i = lr.partition_point(|&x| x <= l).clamp(1, lr.len() - 1);
                let th = (l - lr[i - 1]) / (lr[i] - lr[i - 1]);
                ws[i - 1] + th * (ws[i] - ws[i - 1])
            }
        });
        Ok(Self {
            name: name.into(),
            breaks: table.iter().map(|p| p.0).collect(),
            kind: ModulusKind::Tabulated(table),
            eval,
            log_eval: None,
            alpha,
            omega0,
            tail: Tail::constant(r_last, w_last),
            tol: 1e-10,
            dini: Arc::new(OnceLock::new()),
        })
    }

    pub fn from_doc(doc: &ModulusDoc) -> Result<Self> {
        let m = match doc.kind.as_str() {
            "zero" => Self::zero(),
            "power" => Self::power(doc.omega0.unwrap_or(1.0), doc.alpha)?,
            "log_power" => Self::log_power(
                doc.p.ok_or_else(|| KfpError::config("p", "log_power needs p"))?,
            )?,
            "tabulated" => {
                let grid: Vec<(f64, f64)> = doc.grid.iter().map(|g| (g[0], g[1])).collect();
                Self::tabulated(doc.name.clone(), &grid, doc.alpha, doc.omega0)?
            }
            other => return Err(KfpError::config("kind", format!("unknown modulus kind `{other}`"))),
        };
        Ok(m.renamed(doc.name.clone()))
    }

    pub fn to_doc(&self) -> ModulusDoc {
        let (kind, grid) = match &self.kind {
            ModulusKind::Tabulated(t) => ("tabulated", t.iter().map(|&(r, w)| [r, w]).collect()),
            ModulusKind::Analytic => ("analytic", Vec::new()),
        };
        ModulusDoc {
            name: self.name.clone(),
            kind: kind.into(),
            alpha: self.alpha,
            omega0: Some(self.omega0),
            p: None,
            grid,
        }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// `k * omega`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k >= 0.0) {
            return Err(KfpError::invalid("k", "must be >= 0"));
        }
        let f = self.eval.clone();
        let t = self.tail;
        let log_eval = self.log_eval.clone().map(|g| -> ModulusFn { Arc::new(move |l| k * g(l)) });
        Ok(Self {
            name: format!("{k}*{}", self.name),
            kind: ModulusKind::Analytic,
            eval: Arc::new(move |r| k * f(r)),
            log_eval,
            alpha: self.alpha,
            omega0: k * self.omega0,
            tail: Tail {
                coef: k * t.coef,
                constant: k * t.constant,
                log_coef: k * t.log_coef,
                ..t
            },
            breaks: self.breaks.clone(),
            tol: self.tol,
            dini: Arc::new(OnceLock::new()),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &ModulusKind {
        &self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.eval)(r)
    }

    pub fn func(&self) -> ModulusFn {
        self.eval.clone()
    }

    fn half_line_opts(&self, scale: f64) -> HalfLineOptions {
        HalfLineOptions {
            rel_tol: self.tol,
            ceiling: 1e8 * scale.max(1e-300),
            ..HalfLineOptions::default()
        }
    }

    /// `Phi(r) = int_0^r omega(s)/s ds`, with the three-way verdict.
    pub fn phi(&self, r: f64) -> Result<HalfLine> {
        if r <= 0.0 {
            return Ok(HalfLine::Finite(0.0));
        }
        let s0 = self.tail.start;
        if r > s0 {
            return Ok(match self.phi(s0)? {
                HalfLine::Finite(v) => HalfLine::Finite(v + self.tail.log_integral(s0, r)),
                other => other,
            });
        }
        let f = &self.eval;
        let w_r = f(r);
        let lr = r.ln();
        let h = integrate_half_line(
            |v: f64| {
                let ev = v.exp();
                match &self.log_eval {
                    Some(g) => g(lr - ev) * ev,
                    None => {
                        let x = r * (-ev).exp();
                        if x < TINY {
                            0.0
                        } else {
                            f(x) * ev
                        }
                    }
                }
            },
            V_START,
            self.half_line_opts(w_r),
        )?;
        Ok(match h {
            HalfLine::Finite(v) => HalfLine::Finite(v + w_r * V_START.exp()),
            other => other,
        })
    }

    /// Cached Dini integral `[omega] = int_0^1 omega(s)/s ds`.
    pub fn dini(&self) -> Result<HalfLine> {
        if let Some(v) = self.dini.get() {
            return Ok(*v);
        }
        let v = self.phi(1.0)?;
        Ok(*self.dini.get_or_init(|| v))
    }

    /// `int_0^1 omega(s) |log s| / s ds`.
    pub fn log_dini(&self) -> Result<HalfLine> {
        let f = &self.eval;
        integrate_half_line(
            |v: f64| {
                let ev = v.exp();
                match &self.log_eval {
                    Some(g) => g(-ev) * ev * ev,
                    None => f((-ev).exp()) * ev * ev,
                }
            },
            V_START,
            // e^{2v} overflows past v = 354
            HalfLineOptions { v_max: 300.0, ..self.half_line_opts(f(1.0)) },
        )
    }

    /// `int_r^inf omega(s)/s^2 ds`.
    pub fn upper(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(KfpError::invalid("r", "must be > 0"));
        }
        let s0 = self.tail.start;
        if r >= s0 {
            return Ok(self.tail.upper(r));
        }
        let f = &self.eval;
        let mut pts = vec![r.ln()];
        pts.extend(self.breaks.iter().filter(|&&b| b > r && b < s0).map(|b| b.ln()));
        pts.push(s0.ln());
        let mut total = self.tail.upper(s0);
        for w in pts.windows(2) {
            let g = |u: f64| {
                let w = f(u.exp());
                if w > 0.0 {
                    (w.ln() - u).exp()
                } else {
                    0.0
                }
            };
            let (v, _) = integrate(g, w[0], w[1], 1e-300, self.tol)?;
            total += v;
        }
        Ok(total)
    }

    /// `M(omega)(r) = omega(r) + int_0^r omega/s + r int_r^inf omega/s^2`.
    pub fn m(&self, r: f64) -> Result<f64> {
        if r < TINY {
            return Ok(0.0);
        }
        let phi = match self.phi(r)? {
            HalfLine::Finite(v) => v,
            _ => return Err(KfpError::Divergent),
        };
        Ok(self.eval(r) + phi + r * self.upper(r)?)
    }

    /// `M(omega)` as a modulus in its own right, with its exact tail.
    pub fn m_modulus(&self) -> Result<Self> {
        let t = self.tail;
        if t.log_coef != 0.0 {
            return Err(KfpError::invalid(
                "omega",
                "M is closed-form only for tails without a logarithmic term",
            ));
        }
        let phi_s = match self.phi(t.start)? {
            HalfLine::Finite(v) => v,
            _ => return Err(KfpError::Divergent),
        };
        let a = t.coef;
        let al = t.alpha;
        let tail = Tail {
            start: t.start,
            coef: a * (1.0 + 1.0 / al + 1.0 / (1.0 - al)),
            alpha: al,
            constant: 2.0 * t.constant + phi_s - a * t.start.powf(al) / al,
            log_coef: t.constant,
        };
        let base = self.clone();
        let eval: ModulusFn = Arc::new(move |r: f64| {
            if r <= 0.0 {
                0.0
            } else if r >= tail.start {
                tail.eval(r)
            } else {
                base.m(r).unwrap_or(f64::NAN)
            }
        });
        let mut m = Self {
            name: format!("M({})", self.name),
            kind: ModulusKind::Analytic,
            eval,
            log_eval: None,
            alpha: self.alpha,
            omega0: 0.0,
            tail,
            breaks: self.breaks.clone(),
            tol: 1e-9,
            dini: Arc::new(OnceLock::new()),
        };
        m.omega0 = m.p2_constant();
        Ok(m)
    }

    /// Smallest `c` with `omega(r) <= c r^alpha` on a dyadic grid of `[1, 2^40]`
    /// plus the analytic sup of the tail beyond the grid.
    fn p2_constant(&self) -> f64 {
        let mut c: f64 = 0.0;
        for j in 0..=40 {
            let r = 2f64.powi(j);
            c = c.max(self.eval(r) / r.powf(self.alpha));
        }
        let t = self.tail;
        if t.alpha <= self.alpha {
            let r = 2f64.powi(40).max(t.start);
            let log_sup = if t.log_coef > 0.0 {
                t.log_coef / (self.alpha * EULER * t.start.powf(self.alpha))
            } else {
                0.0
            };
            c = c.max(t.coef * r.powf(t.alpha - self.alpha) + t.constant.max(0.0) / r.powf(self.alpha) + log_sup);
        }
        c
    }

    /// `N(omega)(r) = M(M(omega))(r)`.
    pub fn n(&self, r: f64) -> Result<f64> {
        self.m_modulus()?.m(r)
    }
}

/// `int_0^1 omega(s)/s ds` as a plain number: `+inf` for divergence, NaN
/// when undetermined at the configured resolution.
pub fn dini_integral(w: &Modulus) -> Result<f64> {
    Ok(w.dini()?.value())
}

/// `int_0^1 omega(s) |log s| / s ds`, with the same sentinels.
pub fn log_dini_integral(w: &Modulus) -> Result<f64> {
    Ok(w.log_dini()?.value())
}

pub fn m_transform(w: &Modulus, r: f64) -> Result<f64> {
    w.m(r)
}

pub fn n_transform(w: &Modulus, r: f64) -> Result<f64> {
    w.n(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn sqrt_dini_values() {
        let w = Modulus::power(1.0, 0.5).unwrap();
        assert!(rel(dini_integral(&w).unwrap(), 2.0) < 1e-9);
        assert!(rel(log_dini_integral(&w).unwrap(), 4.0) < 1e-9);
    }

    #[test]
    fn zero_modulus_is_zero_everywhere() {
        let z = Modulus::zero();
        assert_eq!(dini_integral(&z).unwrap(), 0.0);
        assert_eq!(z.m(0.3).unwrap(), 0.0);
        assert_eq!(z.n(2.0).unwrap(), 0.0);
    }

    #[test]
    fn log_three_halves_is_dini_not_log_dini() {
        let w = Modulus::log_power(1.5).unwrap();
        let d = w.dini().unwrap();
        assert!(d.is_finite());
        // int_0^inf (1+u)^{-3/2} du = 2
        assert!(rel(d.value(), 2.0) < 1e-8);
        assert_eq!(w.log_dini().unwrap(), HalfLine::Infinite);
    }

    #[test]
    fn m_of_square_root() {
        let w = Modulus::power(1.0, 0.5).unwrap();
        for r in [1e-6, 0.01, 0.5, 1.0, 3.0, 100.0] {
            assert!(rel(w.m(r).unwrap(), 5.0 * r.sqrt()) < 1e-9, "r = {r}");
        }
    }

    #[test]
    fn n_of_square_root() {
        let w = Modulus::power(1.0, 0.5).unwrap();
        for r in [1e-4, 0.25, 1.0, 7.0] {
            assert!(rel(w.n(r).unwrap(), 25.0 * r.sqrt()) < 1e-7, "r = {r}");
        }
    }

    #[test]
    fn m_of_divergent_modulus_errors() {
        let w = Modulus::log_power(0.5).unwrap();
        assert_eq!(w.m(0.5), Err(KfpError::Divergent));
    }

    #[test]
    fn tail_of_m_matches_direct_evaluation() {
        let w = Modulus::log_power(3.0).unwrap();
        let mm = w.m_modulus().unwrap();
        for r in [1.0, 2.0, 10.0] {
            assert!(rel(mm.eval(r), w.m(r).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn tabulated_interpolation_is_monotone() {
        let t = Modulus::tabulated("t", &[(0.1, 0.2), (0.2, 0.1), (1.0, 0.5)], 0.5, None).unwrap();
        assert!((t.eval(0.05) - 0.1).abs() < 1e-15);
        assert_eq!(t.eval(0.2), 0.2);
        assert_eq!(t.eval(5.0), 0.5);
        let mut prev = 0.0;
        for k in 0..200 {
            let v = t.eval(1e-3 * 1.05f64.powi(k));
            assert!(v >= prev);
            prev = v;
        }
        assert!(Modulus::tabulated("bad", &[(1.0, 1.0), (0.5, 1.0)], 0.5, None).is_err());
    }

    #[test]
    fn tabulated_dini_is_piecewise_exact() {
        // linear below 1 then constant: int_0^1 w/s = 1
        let t = Modulus::tabulated("t", &[(1.0, 1.0)], 0.5, None).unwrap();
        assert!(rel(t.dini().unwrap().value(), 1.0) < 1e-9);
        // M(r) for r >= 1: 1 + 1 + log r + 1
        assert!(rel(t.m(2.0).unwrap(), 3.0 + 2f64.ln()) < 1e-9);
    }

    #[test]
    fn doc_round_trip() {
        let doc: ModulusDoc =
            serde_json::from_str(r#"{"name":"sqrt","kind":"power","alpha":0.5,"omega0":1.0}"#).unwrap();
        let w = Modulus::from_doc(&doc).unwrap();
        assert_eq!(w.name(), "sqrt");
        assert_eq!(w.eval(4.0), 2.0);
        let bad: ModulusDoc = serde_json::from_str(r#"{"name":"x","kind":"cubic"}"#).unwrap();
        assert!(matches!(Modulus::from_doc(&bad), Err(KfpError::Config { .. })));
    }
}
