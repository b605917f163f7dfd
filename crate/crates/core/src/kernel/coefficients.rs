//! Time-dependent diffusion matrices `A0(t)` and optional spatial
//! perturbations for frozen-coefficient experiments.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::geometry::ModelStructure;
use crate::moduli::{Modulus, Tail};
use crate::quadrature::gauss_legendre;

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type FieldMatrixFn = Arc<dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync>;

/// Representation of `t -> A0(t)`.
#[derive(Clone)]
pub enum A0Spec {
    Constant(DMatrix<f64>),
    /// `(t_i, A_i)` with `A_i` on `[t_i, t_{i+1})`; `A_0` extends to `-inf`
    /// and the last matrix to `+inf`.
    Piecewise(Vec<(f64, DMatrix<f64>)>),
    /// Only measurability is assumed; `breakpoints` are known switch times.
    Callable { f: MatrixFn, breakpoints: Vec<f64> },
}

impl fmt::Debug for A0Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            A0Spec::Constant(a) => f.debug_tuple("Constant").field(a).finish(),
            A0Spec::Piecewise(p) => f.debug_tuple("Piecewise").field(p).finish(),
            A0Spec::Callable { breakpoints, .. } => {
                f.debug_struct("Callable").field("breakpoints", breakpoints).finish()
            }
        }
    }
}

/// Additive spatial part `P(x,t)` of `a(x,t) = A0(t) + P(x,t)`, with its
/// declared partial modulus.
#[derive(Clone)]
pub struct SpatialPerturbation {
    pub f: FieldMatrixFn,
    pub modulus: Modulus,
    pub time_independent: bool,
    pub doc: Option<PerturbationDoc>,
}

impl fmt::Debug for SpatialPerturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialPerturbation")
            .field("modulus", &self.modulus)
            .field("doc", &self.doc)
            .finish()
    }
}

/// `P(x,t) = epsilon sin(x_axis) I_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDoc {
    pub kind: String,
    pub epsilon: f64,
    #[serde(default)]
    pub axis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A0Doc {
    Constant(Vec<Vec<f64>>),
    Piecewise(Vec<(f64, Vec<Vec<f64>>)>),
}

/// JSON form of a coefficient model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDoc {
    pub a0: A0Doc,
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationDoc>,
}

fn matrix_from_rows(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if r == 0 || rows.iter().any(|x| x.len() != c) {
        return Err(KfpError::config(path, "matrix rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// Diffusion coefficients of the operator.
#[derive(Debug, Clone)]
pub struct CoefficientModel {
    structure: ModelStructure,
    a0: A0Spec,
    nu: f64,
    perturbation: Option<SpatialPerturbation>,
    /// Relative tolerance of the midpoint rule for callable `A0`.
    pub tol: f64,
}

fn check_matrix(a: &DMatrix<f64>, q: usize, nu: f64, t: f64) -> Result<()> {
    if a.shape() != (q, q) {
        return Err(KfpError::Dimension { expected: q, got: a.nrows() });
    }
    if (a - a.transpose()).amax() > 1e-12 {
        return Err(KfpError::Ellipticity(format!("A0({t}) is not symmetric")));
    }
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let lo = eig.min();
    let hi = eig.max();
    if lo < nu * (1.0 - 1e-12) || hi > (1.0 + 1e-12) / nu {
        return Err(KfpError::Ellipticity(format!(
            "eigenvalues of A0({t}) in [{lo}, {hi}], outside [{nu}, {}]",
            1.0 / nu
        )));
    }
    Ok(())
}

impl CoefficientModel {
    fn validated(structure: ModelStructure, a0: A0Spec, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(KfpError::invalid("nu", format!("must lie in (0,1], got {nu}")));
        }
        let q = structure.q();
        match &a0 {
            A0Spec::Constant(a) => check_matrix(a, q, nu, 0.0)?,
            A0Spec::Piecewise(p) => {
                if p.is_empty() || p.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(KfpError::invalid("a0", "piecewise switch times must increase"));
                }
                for (t, a) in p {
                    check_matrix(a, q, nu, *t)?;
                }
            }
            A0Spec::Callable { f, breakpoints } => {
                for k in 0..=64 {
                    let t = -1.0 + 3.0 * k as f64 / 64.0;
                    check_matrix(&f(t), q, nu, t)?;
                }
                for &t in breakpoints {
                    check_matrix(&f(t), q, nu, t)?;
                }
            }
        }
        Ok(Self { structure, a0, nu, perturbation: None, tol: 1e-10 })
    }

    pub fn constant(structure: ModelStructure, a: DMatrix<f64>, nu: f64) -> Result<Self> {
        Self::validated(structure, A0Spec::Constant(a), nu)
    }

    pub fn piecewise(structure: ModelStructure, pieces: Vec<(f64, DMatrix<f64>)>, nu: f64) -> Result<Self> {
        Self::validated(structure, A0Spec::Piecewise(pieces), nu)
    }

    pub fn callable(structure: ModelStructure, f: MatrixFn, breakpoints: Vec<f64>, nu: f64) -> Result<Self> {
        let mut b = breakpoints;
        b.sort_by(f64::total_cmp);
        Self::validated(structure, A0Spec::Callable { f, breakpoints: b }, nu)
    }

    pub fn with_perturbation(mut self, p: SpatialPerturbation) -> Self {
        self.perturbation = Some(p);
        self
    }

    /// `epsilon sin(x_axis) I_q`, whose partial modulus is
    /// `epsilon min(max(r, r^{q_axis}), 2)`.
    pub fn sinusoidal_perturbation(s: &ModelStructure, epsilon: f64, axis: usize) -> Result<SpatialPerturbation> {
        if axis >= s.dim() {
            return Err(KfpError::invalid("axis", format!("must be < {}", s.dim())));
        }
        if !(epsilon >= 0.0) {
            return Err(KfpError::invalid("epsilon", "must be >= 0"));
        }
        let q = s.q();
        let qa = s.exponents()[axis] as i32;
        let modulus = Modulus::analytic(
            format!("sin_perturbation({epsilon})"),
            Arc::new(move |r: f64| if r <= 0.0 { 0.0 } else { epsilon * r.max(r.powi(qa)).min(2.0) }),
            0.5,
            2.0 * epsilon,
            Tail::constant(2.0, 2.0 * epsilon),
        )?;
        Ok(SpatialPerturbation {
            f: Arc::new(move |x: &[f64], _t| DMatrix::identity(q, q) * (epsilon * x[axis].sin())),
            modulus,
            time_independent: true,
            doc: Some(PerturbationDoc { kind: "sinusoidal".into(), epsilon, axis }),
        })
    }

    pub fn from_doc(structure: &ModelStructure, doc: &CoefficientDoc) -> Result<Self> {
        let a0 = match &doc.a0 {
            A0Doc::Constant(rows) => A0Spec::Constant(matrix_from_rows(rows, "a0.constant")?),
            A0Doc::Piecewise(p) => A0Spec::Piecewise(
                p.iter()
                    .enumerate()
                    .map(|(i, (t, rows))| Ok((*t, matrix_from_rows(rows, &format!("a0.piecewise[{i}]"))?)))
                    .collect::<Result<_>>()?,
            ),
        };
        let mut m = Self::validated(structure.clone(), a0, doc.nu).map_err(|e| match e {
            KfpError::Ellipticity(r) => KfpError::config("a0", r),
            KfpError::InvalidArgument { name, reason } => KfpError::config(name, reason),
            other => other,
        })?;
        if let Some(p) = &doc.perturbation {
            if p.kind != "sinusoidal" {
                return Err(KfpError::config("perturbation.kind", format!("unknown kind `{}`", p.kind)));
            }
            let pert = Self::sinusoidal_perturbation(structure, p.epsilon, p.axis)
                .map_err(|e| KfpError::config("perturbation", e.to_string()))?;
            m = m.with_perturbation(pert);
        }
        Ok(m)
    }

    pub fn to_doc(&self) -> Option<CoefficientDoc> {
        let a0 = match &self.a0 {
            A0Spec::Constant(a) => A0Doc::Constant(matrix_rows(a)),
            A0Spec::Piecewise(p) => A0Doc::Piecewise(p.iter().map(|(t, a)| (*t, matrix_rows(a))).collect()),
            A0Spec::Callable { .. } => return None,
        };
        let perturbation = match &self.perturbation {
            None => None,
            Some(p) => Some(p.doc.clone()?),
        };
        Some(CoefficientDoc { a0, nu: self.nu, perturbation })
    }

    pub fn structure(&self) -> &ModelStructure {
        &self.structure
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn a0_spec(&self) -> &A0Spec {
        &self.a0
    }

    pub fn perturbation(&self) -> Option<&SpatialPerturbation> {
        self.perturbation.as_ref()
    }

    pub fn is_time_only(&self) -> bool {
        self.perturbation.is_none()
    }

    /// The time-only part `A0(t)`.
    pub fn without_perturbation(&self) -> Self {
        Self { perturbation: None, ..self.clone() }
    }

    pub fn a0(&self, t: f64) -> DMatrix<f64> {
        match &self.a0 {
            A0Spec::Constant(a) => a.clone(),
            A0Spec::Piecewise(p) => {
                let i = p.partition_point(|(ti, _)| *ti <= t);
                p[i.saturating_sub(1)].1.clone()
            }
            A0Spec::Callable { f, .. } => f(t),
        }
    }

    /// `a(x,t) = A0(t) + P(x,t)`.
    pub fn a(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        match &self.perturbation {
            None => self.a0(t),
            Some(p) => self.a0(t) + (p.f)(x, t),
        }
    }

    /// Switch times of `A0`.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.a0 {
            A0Spec::Constant(_) => Vec::new(),
            A0Spec::Piecewise(p) => p.iter().skip(1).map(|(t, _)| *t).collect(),
            A0Spec::Callable { breakpoints, .. } => breakpoints.clone(),
        }
    }

    /// Coefficients frozen at the spatial point `xbar`; time dependence kept.
    pub fn frozen_at(&self, xbar: &[f64]) -> Result<Self> {
        let Some(p) = &self.perturbation else {
            return Ok(self.clone());
        };
        let a0 = if p.time_independent {
            let shift = (p.f)(xbar, 0.0);
            match &self.a0 {
                A0Spec::Constant(a) => A0Spec::Constant(a + &shift),
                A0Spec::Piecewise(pc) => A0Spec::Piecewise(pc.iter().map(|(t, a)| (*t, a + &shift)).collect()),
                A0Spec::Callable { f, breakpoints } => {
                    let f = f.clone();
                    A0Spec::Callable { f: Arc::new(move |t| f(t) + &shift), breakpoints: breakpoints.clone() }
                }
            }
        } else {
            let base = self.clone();
            let pf = p.f.clone();
            let xb = xbar.to_vec();
            A0Spec::Callable { f: Arc::new(move |t| base.a0(t) + pf(&xb, t)), breakpoints: self.breakpoints() }
        };
        let mut frozen = self.clone();
        frozen.a0 = a0;
        frozen.perturbation = None;
        Ok(frozen)
    }

    /// `E(u) diag(A, 0) E(u)^T`.
    fn integrand(&self, u: f64, a: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.structure.q();
        let e = self.structure.exp_neg_tb(u);
        let eq = e.columns(0, q);
        eq * a * eq.transpose()
    }

    /// Exact integral over the lag interval `[a, b]` for a constant matrix.
    fn piece(&self, a: f64, b: f64, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.structure.dim();
        let rule = gauss_legendre(self.structure.k() + 2);
        let mut c = DMatrix::zeros(n, n);
        let h = 0.5 * (b - a);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            c += self.integrand(a + h * (x + 1.0), m) * (w * h);
        }
        c
    }

    fn midpoint(&self, t: f64, a: f64, b: f64, f: &MatrixFn) -> Result<DMatrix<f64>> {
        let n = self.structure.dim();
        let mut panels = 8usize;
        let eval = |panels: usize| {
            let h = (b - a) / panels as f64;
            let mut c = DMatrix::zeros(n, n);
            for i in 0..panels {
                let u = a + (i as f64 + 0.5) * h;
                c += self.integrand(u, &f(t - u)) * h;
            }
            c
        };
        let mut prev = eval(panels);
        while panels < (1 << 22) {
            panels *= 2;
            let next = eval(panels);
            if (&next - &prev).norm() <= self.tol * next.norm() {
                return Ok(next);
            }
            prev = next;
        }
        Err(KfpError::Quadrature(format!("midpoint rule for C at t = {t}, lags {a}..{b} did not converge")))
    }

    /// `C(t,s)` as a plain matrix.
    pub fn covariance_matrix(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        self.covariance_lag(t, t - s)
    }

    /// `C(t, t - sigma) = int_0^sigma E(u) diag(A0(t-u), 0) E(u)^T du`; exact
    /// for tiny `sigma`, where `t - sigma` would round to `t`.
    pub fn covariance_lag(&self, t: f64, sigma: f64) -> Result<DMatrix<f64>> {
        let n = self.structure.dim();
        let mut cuts = vec![0.0];
        let mut inner: Vec<f64> = self.breakpoints().into_iter().map(|b| t - b).filter(|&u| u > 0.0 && u < sigma).collect();
        inner.sort_by(f64::total_cmp);
        cuts.extend(inner);
        cuts.push(sigma);
        let mut c = DMatrix::zeros(n, n);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            c += match &self.a0 {
                A0Spec::Constant(m) => self.piece(a, b, m),
                A0Spec::Piecewise(_) => self.piece(a, b, &self.a0(t - 0.5 * (a + b))),
                A0Spec::Callable { f, .. } => self.midpoint(t, a, b, f)?,
            };
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s11() -> ModelStructure {
        ModelStructure::build(&[1, 1], None).unwrap()
    }

    #[test]
    fn ellipticity_is_enforced() {
        let bad = CoefficientModel::constant(s11(), DMatrix::from_element(1, 1, 3.0), 0.5);
        assert!(matches!(bad, Err(KfpError::Ellipticity(_))));
        let asym = CoefficientModel::constant(
            ModelStructure::build(&[2, 1], None).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            0.5,
        );
        assert!(matches!(asym, Err(KfpError::Ellipticity(_))));
    }

    #[test]
    fn piecewise_lookup() {
        let m = CoefficientModel::piecewise(
            s11(),
            vec![(0.0, DMatrix::from_element(1, 1, 1.0)), (0.5, DMatrix::from_element(1, 1, 2.0))],
            0.5,
        )
        .unwrap();
        assert_eq!(m.a0(-1.0)[0], 1.0);
        assert_eq!(m.a0(0.49)[0], 1.0);
        assert_eq!(m.a0(0.5)[0], 2.0);
        assert_eq!(m.breakpoints(), vec![0.5]);
    }

    #[test]
    fn callable_matches_constant() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let c = CoefficientModel::constant(s11(), one.clone(), 1.0).unwrap();
        let f = CoefficientModel::callable(s11(), Arc::new(move |_| one.clone()), vec![], 1.0).unwrap();
        let d = c.covariance_matrix(1.0, 0.0).unwrap() - f.covariance_matrix(1.0, 0.0).unwrap();
        assert!(d.norm() < 1e-9);
    }

    #[test]
    fn frozen_model_adds_perturbation() {
        let s = s11();
        let p = CoefficientModel::sinusoidal_perturbation(&s, 0.1, 0).unwrap();
        let m = CoefficientModel::constant(s, DMatrix::from_element(1, 1, 1.0), 0.5)
            .unwrap()
            .with_perturbation(p);
        let f = m.frozen_at(&[1.0, 0.0]).unwrap();
        assert!((f.a0(0.3)[0] - (1.0 + 0.1 * 1f64.sin())).abs() < 1e-15);
        assert!(f.is_time_only());
    }

    #[test]
    fn doc_round_trip() {
        let json = r#"{"a0":{"piecewise":[[0.0,[[1.0]]],[0.5,[[2.0]]]]},"nu":0.5,"perturbation":{"kind":"sinusoidal","epsilon":0.1,"axis":0}}"#;
        let doc: CoefficientDoc = serde_json::from_str(json).unwrap();
        let m = CoefficientModel::from_doc(&s11(), &doc).unwrap();
        assert_eq!(m.to_doc().unwrap(), doc);
        let bad: CoefficientDoc = serde_json::from_str(r#"{"a0":{"constant":[[5.0]]},"nu":0.5}"#).unwrap();
        assert!(matches!(CoefficientModel::from_doc(&s11(), &bad), Err(KfpError::Config { .. })));
    }
}
