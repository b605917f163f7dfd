//! Scenario configuration: the JSON document and its validated form.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::singular::HessianSweep;
use crate::error::{KfpError, Result};
use crate::geometry::{DomainBox, ModelStructure, StructureDoc};
use crate::kernel::{CoefficientDoc, CoefficientModel};
use crate::moduli::{Modulus, ModulusDoc};
use crate::representation::{ManufacturedSolution, ReprOptions, SourceDoc, SourceSpec};

/// Checks a scenario can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    Normalization,
    ChapmanKolmogorov,
    LgammaResidual,
    GaussianBound,
    ModuliBank,
    HessianRoundtrip,
    SingularBounds,
    SchauderSpace,
    SchauderTime,
    ModelOperator,
    Interpolation,
    SdeOracle,
}

/// `K = [-half_width, half_width]^N` unless `x` lists the intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDoc {
    #[serde(default = "one")]
    pub half_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<[f64; 2]>>,
    pub tau: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Points per axis of the closed-form grids on `K`; the coarse level has `(n+1)/2`.
    pub x_points: usize,
    pub t_points: usize,
    /// Log-spaced radii between the coarse resolution and `diam K`.
    pub radii: usize,
    /// Space-time pairs sampled by the time checks.
    pub pairs: usize,
    /// Cap on points entering the all-pairs Hoelder seminorms.
    pub holder_points: usize,
    /// Points per axis of the coarse grid for `T_ij` sweeps; the fine one has `2n-1`.
    pub repr_x_points: usize,
    /// Times of the `T_ij` sweeps, equally spaced in `(tau, T]`.
    pub repr_t_points: usize,
    /// Inner scales `2^j`, `j` in `scale_lo..=scale_hi`.
    pub scale_lo: i32,
    pub scale_hi: i32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_points: 33,
            t_points: 17,
            radii: 16,
            pairs: 4000,
            holder_points: 2500,
            repr_x_points: 9,
            repr_t_points: 3,
            scale_lo: -4,
            scale_hi: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Admissible relative change of `c_star` under refinement.
    pub stability: f64,
    /// Largest admissible `c_star` of best-constant checks.
    pub ceiling: f64,
    /// Relative error of `T_ij(L u)` against `D^2 u` for time-only coefficients.
    pub roundtrip: f64,
    /// The same under the frozen-coefficient split.
    pub frozen_roundtrip: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { stability: 0.1, ceiling: 1e8, roundtrip: 1e-4, frozen_roundtrip: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSpec {
    /// Starting point; the first unit vector when absent.
    pub y: Option<Vec<f64>>,
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Step-halving bias allowed on the mean, in standard errors.
    pub bias_mean: f64,
    /// Step-halving bias allowed on the covariance, relative Frobenius.
    pub bias_cov: f64,
}

impl Default for SdeSpec {
    fn default() -> Self {
        Self { y: None, s: None, t: None, n_paths: 100_000, n_steps: 256, bias_mean: 1.0, bias_cov: 0.01 }
    }
}

/// JSON form of a [`Scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub structure: StructureDoc,
    pub coefficients: CoefficientDoc,
    #[serde(default)]
    pub sources: Vec<SourceDoc>,
    pub domain: DomainDoc,
    #[serde(default)]
    pub grids: GridSpec,
    #[serde(default)]
    pub checks: Vec<CheckId>,
    /// Modulus bank for the moduli checks.
    #[serde(default)]
    pub moduli: Vec<ModulusDoc>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub repr: ReprOptions,
    #[serde(default)]
    pub sde: SdeSpec,
    /// Hoelder exponent of the estimates.
    #[serde(default = "half")]
    pub alpha: f64,
    /// Gaussian weight of `U^mu`, `V^mu`; `nu / 4` when absent.
    #[serde(default)]
    pub mu: Option<f64>,
}

fn half() -> f64 {
    0.5
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub structure: ModelStructure,
    pub coefficients: CoefficientModel,
    /// Analytic sources.
    pub sources: Vec<SourceSpec>,
    /// Manufactured solutions.
    pub solutions: Vec<ManufacturedSolution>,
    pub domain: DomainBox,
    pub grids: GridSpec,
    pub checks: Vec<CheckId>,
    pub moduli: Vec<Modulus>,
    pub tolerances: Tolerances,
    pub repr: ReprOptions,
    pub sde: SdeSpec,
    pub alpha: f64,
    pub mu: f64,
    doc: ScenarioDoc,
    pub(crate) sweeps: Arc<OnceLock<Vec<HessianSweep>>>,
}

fn prefixed(prefix: &str, e: KfpError) -> KfpError {
    match e {
        KfpError::Config { path, reason } => KfpError::config(format!("{prefix}.{path}"), reason),
        other => KfpError::config(prefix, other.to_string()),
    }
}

impl Scenario {
    /// Parses JSON text; schema errors carry the offending path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: ScenarioDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            KfpError::config(path, e.into_inner().to_string())
        })?;
        Self::from_doc(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KfpError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_doc(doc: ScenarioDoc) -> Result<Self> {
        let structure = ModelStructure::from_doc(&doc.structure).map_err(|e| prefixed("structure", e))?;
        let n = structure.dim();
        let coefficients =
            CoefficientModel::from_doc(&structure, &doc.coefficients).map_err(|e| prefixed("coefficients", e))?;
        let d = &doc.domain;
        if !(d.t_end > d.tau) {
            return Err(KfpError::config("domain", "need tau < T"));
        }
        let x = match &d.x {
            Some(iv) => {
                if iv.len() != n {
                    return Err(KfpError::config("domain.x", format!("expected {n} intervals, got {}", iv.len())));
                }
                if iv.iter().any(|p| !(p[1] > p[0])) {
                    return Err(KfpError::config("domain.x", "empty interval"));
                }
                iv.iter().map(|p| (p[0], p[1])).collect()
            }
            None => {
                if !(d.half_width > 0.0) {
                    return Err(KfpError::config("domain.half_width", "must be > 0"));
                }
                vec![(-d.half_width, d.half_width); n]
            }
        };
        let domain = DomainBox { x, t: (d.tau, d.t_end) };
        let g = &doc.grids;
        if g.x_points < 3 || g.t_points < 2 || g.radii < 2 || g.repr_x_points < 2 || g.repr_t_points < 1 {
            return Err(KfpError::config("grids", "need x_points >= 3, t_points >= 2, radii >= 2, repr_x_points >= 2, repr_t_points >= 1"));
        }
        if g.scale_lo > g.scale_hi {
            return Err(KfpError::config("grids.scale_lo", "must not exceed scale_hi"));
        }
        if !(doc.alpha > 0.0 && doc.alpha < 1.0) {
            return Err(KfpError::config("alpha", "must lie in (0,1)"));
        }
        let mu = doc.mu.unwrap_or(0.25 * coefficients.nu());
        if !(mu > 0.0) {
            return Err(KfpError::config("mu", "must be > 0"));
        }
        let mut sources = Vec::new();
        let mut solutions = Vec::new();
        for (i, sd) in doc.sources.iter().enumerate() {
            let path = format!("sources[{i}]");
            match sd {
                SourceDoc::Manufactured(m) => {
                    solutions.push(ManufacturedSolution::from_doc(&structure, m).map_err(|e| prefixed(&path, e))?)
                }
                SourceDoc::Expr { .. } => {
                    let seed = crate::rng::derive_seed(doc.seed, "source", i as u64);
                    let src = SourceSpec::from_doc(&coefficients, sd, &domain, seed).map_err(|e| prefixed(&path, e))?;
                    if src.tau < domain.t.0 || src.t_end < domain.t.1 {
                        return Err(KfpError::config(path, "support must cover the domain time range"));
                    }
                    src.spot_check(&structure, &domain, 256, seed).map_err(|e| prefixed(&format!("sources[{i}]"), e))?;
                    sources.push(src);
                }
            }
        }
        let moduli = doc
            .moduli
            .iter()
            .enumerate()
            .map(|(i, m)| Modulus::from_doc(m).map_err(|e| prefixed(&format!("moduli[{i}]"), e)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(y) = &doc.sde.y {
            if y.len() != n {
                return Err(KfpError::config("sde.y", format!("expected {n} entries, got {}", y.len())));
            }
        }
        Ok(Self {
            name: doc.name.clone(),
            seed: doc.seed,
            structure,
            coefficients,
            sources,
            solutions,
            domain,
            grids: doc.grids.clone(),
            checks: doc.checks.clone(),
            moduli,
            tolerances: doc.tolerances.clone(),
            repr: doc.repr.clone(),
            sde: doc.sde.clone(),
            alpha: doc.alpha,
            mu,
            doc,
            sweeps: Arc::new(OnceLock::new()),
        })
    }

    pub fn doc(&self) -> &ScenarioDoc {
        &self.doc
    }

    /// The same scenario with every manufactured solution replaced by `u = 0`.
    pub fn with_zero_solutions(&self) -> Self {
        let mut sc = self.clone();
        sc.solutions = sc.solutions.iter().map(|u| u.scaled(0.0)).collect();
        sc.sweeps = Arc::new(OnceLock::new());
        sc
    }
}
