//! Best-constant reports and the fitting helpers shared by every checker.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Ratios are only formed where the right-hand side exceeds this floor.
pub const RHS_FLOOR: f64 = 1e-14;

/// Seed and grid fingerprint of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub seed: u64,
    pub grid_hash: String,
}

/// Measured left-hand side, computed right-hand side and fitted best
/// constant for one inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub inequality_id: String,
    pub rhs_form: String,
    pub lhs_max: f64,
    pub c_star: f64,
    /// Relative change of `c_star` under refinement; 0 when not measured.
    pub stability: f64,
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub pass: bool,
    /// Auxiliary fitted quantities (inner scale, exponents, errors).
    pub extra: BTreeMap<String, f64>,
    pub provenance: Provenance,
    /// Abscissa of curve-type samples (radii), empty for pointwise samples.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub abscissa: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub lhs_samples: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rhs_samples: Vec<f64>,
}

impl EstimateReport {
    pub fn new(id: impl Into<String>, rhs_form: impl Into<String>) -> Self {
        Self {
            inequality_id: id.into(),
            rhs_form: rhs_form.into(),
            lhs_max: 0.0,
            c_star: 0.0,
            stability: 0.0,
            samples: 0,
            seed: 0,
            tolerance: 0.0,
            pass: false,
            extra: BTreeMap::new(),
            provenance: Provenance::default(),
            abscissa: Vec::new(),
            lhs_samples: Vec::new(),
            rhs_samples: Vec::new(),
        }
    }

    pub fn with_samples(mut self, lhs: Vec<f64>, rhs: Vec<f64>) -> Self {
        self.lhs_max = lhs.iter().cloned().fold(0.0, f64::max);
        self.samples = lhs.len();
        self.lhs_samples = lhs;
        self.rhs_samples = rhs;
        self
    }

    pub fn with_extra(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.provenance.seed = seed;
        self
    }

    pub fn with_grid_hash(mut self, parts: &[f64]) -> Self {
        self.provenance.grid_hash = grid_hash(parts);
        self
    }

    pub fn with_abscissa(mut self, x: Vec<f64>) -> Self {
        self.abscissa = x;
        self
    }

    /// Drops the per-sample arrays, keeping the summary fields.
    pub fn summarized(mut self) -> Self {
        self.abscissa.clear();
        self.lhs_samples.clear();
        self.rhs_samples.clear();
        self
    }

    /// Sets `pass` from finiteness of `c_star`, the ceiling and the stability band.
    pub fn judge(mut self, ceiling: f64, stability_band: f64) -> Self {
        self.tolerance = stability_band;
        self.pass = self.c_star.is_finite()
            && self.c_star <= ceiling
            && self.stability.is_finite()
            && self.stability <= stability_band;
        self
    }
}

/// Hex SHA-256 of the bit patterns of `parts`.
pub fn grid_hash(parts: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_bits().to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `max lhs/rhs` over samples with `rhs > RHS_FLOOR`. A sample with positive
/// lhs and vanishing rhs makes the fit infinite; all-zero lhs gives 0.
pub fn max_ratio(lhs: &[f64], rhs: &[f64]) -> f64 {
    let mut c: f64 = 0.0;
    for (&l, &r) in lhs.iter().zip(rhs) {
        if l <= 0.0 {
            continue;
        }
        if r > RHS_FLOOR {
            c = c.max(l / r);
        } else if l > RHS_FLOOR {
            return f64::INFINITY;
        }
    }
    c
}

/// Two-level scan: for each inner scale `c_j` in `scales`, the outer
/// multiplier is `max lhs/rhs(c_j)`; the reported constant is
/// `min_j max(c_j, outer_j)`, together with the minimizing scale.
pub fn two_level_fit<F>(lhs: &[f64], scales: &[f64], mut rhs_at: F) -> (f64, f64)
where
    F: FnMut(f64) -> Vec<f64>,
{
    if lhs.iter().all(|&l| l <= 0.0) {
        return (0.0, scales.first().copied().unwrap_or(1.0));
    }
    let mut best = (f64::INFINITY, f64::NAN);
    for &c in scales {
        let outer = max_ratio(lhs, &rhs_at(c));
        let v = c.max(outer);
        if v < best.0 {
            best = (v, c);
        }
    }
    best
}

/// Relative change `|a - b| / max(|a|, |b|)`, 0 when both vanish.
pub fn relative_change(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else if !m.is_finite() {
        f64::INFINITY
    } else {
        (a - b).abs() / m
    }
}

/// `{2^j : j in lo..=hi}`.
pub fn dyadic_scales(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|j| 2f64.powi(j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_filters_vanishing_rhs() {
        assert_eq!(max_ratio(&[0.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(max_ratio(&[1e-20, 2.0], &[0.0, 1.0]), 2.0);
        assert_eq!(max_ratio(&[1.0], &[0.0]), f64::INFINITY);
    }

    #[test]
    fn two_level_picks_balanced_scale() {
        // rhs(c) = c * x, so outer = max(lhs/x)/c; balanced at c^2 = 16
        let lhs = [4.0, 16.0];
        let x = [1.0, 1.0];
        let (cs, scale) = two_level_fit(&lhs, &dyadic_scales(-3, 6), |c| x.iter().map(|v| c * v).collect());
        assert_eq!(scale, 4.0);
        assert_eq!(cs, 4.0);
        assert_eq!(two_level_fit(&[0.0], &[1.0], |_| vec![0.0]).0, 0.0);
    }

    #[test]
    fn grid_hash_is_stable() {
        assert_eq!(grid_hash(&[1.0, 2.0]), grid_hash(&[1.0, 2.0]));
        assert_ne!(grid_hash(&[1.0, 2.0]), grid_hash(&[2.0, 1.0]));
    }
}
