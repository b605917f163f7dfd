//! Homogeneous group structure underlying the KFP operator: the block
//! matrix `B`, the nilpotent exponential `E(t) = exp(-tB)`, the group law,
//! anisotropic dilations, the homogeneous norm and the quasi-distance.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::rng;

/// Relative singular-value threshold for the rank test on the blocks.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Default sample count for the Monte-Carlo estimate of `|B_1(0)|`.
pub const OMEGA_Q_SAMPLES: usize = 1_000_000;
const OMEGA_Q_SEED: u64 = 0x00b1_0c5e;

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// A point `(x, t)` of `R^{N+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPoint {
    pub x: DVector<f64>,
    pub t: f64,
}

impl GroupPoint {
    pub fn new(x: DVector<f64>, t: f64) -> Self {
        Self { x, t }
    }

    pub fn from_slice(x: &[f64], t: f64) -> Self {
        Self {
            x: DVector::from_column_slice(x),
            t,
        }
    }

    pub fn origin(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            t: 0.0,
        }
    }
}

/// Block structure of the drift matrix together with its dilation data.
#[derive(Debug)]
pub struct ModelStructure {
    m: Vec<usize>,
    blocks: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
    b_powers: Vec<DMatrix<f64>>,
    exponents: Vec<u32>,
    hom_dim: u32,
    omega_q: OnceLock<VolumeEstimate>,
}

impl Clone for ModelStructure {
    fn clone(&self) -> Self {
        let omega_q = OnceLock::new();
        if let Some(v) = self.omega_q.get() {
            let _ = omega_q.set(*v);
        }
        Self {
            m: self.m.clone(),
            blocks: self.blocks.clone(),
            b: self.b.clone(),
            b_powers: self.b_powers.clone(),
            exponents: self.exponents.clone(),
            hom_dim: self.hom_dim,
            omega_q,
        }
    }
}

impl PartialEq for ModelStructure {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.blocks == other.blocks
    }
}

/// Serialized form: `{"m": [...], "blocks": [[[...]]], "exponents": [...], "Q": int}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StructureDoc {
    pub m: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<u32>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q_hom: Option<u32>,
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * smax).count()
}

/// Canonical block `[I_{rows} | 0]` of shape `rows x cols`.
fn canonical_block(rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 })
}

impl ModelStructure {
    /// Builds the structure from block sizes `m = [m_0, ..., m_k]` and optional
    /// subdiagonal blocks `B_j` of shape `m_j x m_{j-1}`.
    pub fn build(m: &[usize], blocks: Option<Vec<DMatrix<f64>>>) -> Result<Self> {
        if m.is_empty() || m.contains(&0) || m.windows(2).any(|w| w[1] > w[0]) {
            return Err(KfpError::NonMonotoneBlocks(m.to_vec()));
        }
        let k = m.len() - 1;
        let blocks = match blocks {
            None => (1..=k).map(|j| canonical_block(m[j], m[j - 1])).collect(),
            Some(bs) => {
                if bs.len() != k {
                    return Err(KfpError::BlockCount {
                        expected: k,
                        got: bs.len(),
                    });
                }
                for (j, bj) in bs.iter().enumerate() {
                    let idx = j + 1;
                    let expected = (m[idx], m[idx - 1]);
                    if bj.shape() != expected {
                        return Err(KfpError::BlockShape {
                            index: idx,
                            expected,
                            got: bj.shape(),
                        });
                    }
                    let rank = numerical_rank(bj);
                    if rank < m[idx] {
                        return Err(KfpError::RankDeficient {
                            index: idx,
                            rank,
                            required: m[idx],
                        });
                    }
                }
                bs
            }
        };
        let n: usize = m.iter().sum();
        let mut b = DMatrix::zeros(n, n);
        let mut offsets = vec![0usize];
        for &mj in m {
            offsets.push(offsets.last().unwrap() + mj);
        }
        for (j, bj) in blocks.iter().enumerate() {
            let row = offsets[j + 1];
            let col = offsets[j];
            b.view_mut((row, col), bj.shape()).copy_from(bj);
        }
        let mut b_powers = vec![DMatrix::identity(n, n)];
        for _ in 0..k {
            let next = b_powers.last().unwrap() * &b;
            b_powers.push(next);
        }
        let exponents: Vec<u32> = m
            .iter()
            .enumerate()
            .flat_map(|(j, &mj)| std::iter::repeat_n(2 * j as u32 + 1, mj))
            .collect();
        let hom_dim = exponents.iter().sum();
        Ok(Self {
            m: m.to_vec(),
            blocks,
            b,
            b_powers,
            exponents,
            hom_dim,
            omega_q: OnceLock::new(),
        })
    }

    pub fn from_doc(doc: &StructureDoc) -> Result<Self> {
        let blocks = doc
            .blocks
            .as_ref()
            .map(|bs| {
                bs.iter()
                    .enumerate()
                    .map(|(j, rows)| {
                        let r = rows.len();
                        let c = rows.first().map_or(0, |row| row.len());
                        if rows.iter().any(|row| row.len() != c) {
                            return Err(KfpError::config(
                                format!("blocks[{j}]"),
                                "ragged rows",
                            ));
                        }
                        Ok(DMatrix::from_fn(r, c, |i, jj| rows[i][jj]))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let s = Self::build(&doc.m, blocks).map_err(|e| match e {
            KfpError::NonMonotoneBlocks(_) => KfpError::config("m", e.to_string()),
            other => other,
        })?;
        if let Some(ex) = &doc.exponents {
            if ex != &s.exponents {
                return Err(KfpError::config("exponents", "inconsistent with m"));
            }
        }
        if let Some(q) = doc.q_hom {
            if q != s.hom_dim {
                return Err(KfpError::config("Q", "inconsistent with m"));
            }
        }
        Ok(s)
    }

    pub fn to_doc(&self) -> StructureDoc {
        StructureDoc {
            m: self.m.clone(),
            blocks: Some(
                self.blocks
                    .iter()
                    .map(|bj| {
                        (0..bj.nrows())
                            .map(|i| bj.row(i).iter().cloned().collect())
                            .collect()
                    })
                    .collect(),
            ),
            exponents: Some(self.exponents.clone()),
            q_hom: Some(self.hom_dim),
        }
    }

    /// Spatial dimension `N`.
    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Rank of the diffusion, `q = m_0`.
    pub fn q(&self) -> usize {
        self.m[0]
    }

    /// Number of lower blocks `k`.
    pub fn k(&self) -> usize {
        self.m.len() - 1
    }

    pub fn m(&self) -> &[usize] {
        &self.m
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    /// Homogeneous dimension `Q` of `R^N`.
    pub fn hom_dim(&self) -> u32 {
        self.hom_dim
    }

    /// Largest dilation exponent `q_N`.
    pub fn max_exponent(&self) -> u32 {
        *self.exponents.last().unwrap()
    }

    /// `E(t) = exp(-tB)`, exact finite series.
    pub fn exp_neg_tb(&self, t: f64) -> DMatrix<f64> {
        let mut e = self.b_powers[0].clone();
        let mut coef = 1.0;
        for (j, bj) in self.b_powers.iter().enumerate().skip(1) {
            coef *= -t / j as f64;
            e += bj * coef;
        }
        e
    }

    /// `D_0(lambda) = diag(lambda^{q_i})`.
    pub fn d0(&self, lambda: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.dim(),
            self.exponents.iter().map(|&q| lambda.powi(q as i32)),
        ))
    }

    /// `(y,s) o (x,t) = (x + E(t) y, t + s)`.
    pub fn compose(&self, a: &GroupPoint, b: &GroupPoint) -> GroupPoint {
        GroupPoint {
            x: &b.x + self.exp_neg_tb(b.t) * &a.x,
            t: a.t + b.t,
        }
    }

    /// `(y,s)^{-1} = (-E(-s) y, -s)`.
    pub fn inverse(&self, a: &GroupPoint) -> GroupPoint {
        GroupPoint {
            x: -(self.exp_neg_tb(-a.t) * &a.x),
            t: -a.t,
        }
    }

    pub fn dilate(&self, lambda: f64, a: &GroupPoint) -> Result<GroupPoint> {
        if !(lambda > 0.0) {
            return Err(KfpError::invalid("lambda", format!("must be > 0, got {lambda}")));
        }
        Ok(GroupPoint {
            x: DVector::from_iterator(
                self.dim(),
                a.x.iter()
                    .zip(&self.exponents)
                    .map(|(xi, &q)| lambda.powi(q as i32) * xi),
            ),
            t: lambda * lambda * a.t,
        })
    }

    /// Anisotropic size `||x|| = sum |x_i|^{1/q_i}`.
    pub fn norm_x(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.exponents)
            .map(|(xi, &q)| match q {
                1 => xi.abs(),
                3 => xi.abs().cbrt(),
                _ => xi.abs().powf(1.0 / q as f64),
            })
            .sum()
    }

    /// Homogeneous norm `rho(x,t) = ||x|| + sqrt|t|`.
    pub fn hom_norm(&self, a: &GroupPoint) -> f64 {
        self.norm_x(a.x.as_slice()) + a.t.abs().sqrt()
    }

    /// `d(xi, eta) = ||x - E(t-s) y|| + sqrt|t-s|`.
    pub fn quasi_distance(&self, xi: &GroupPoint, eta: &GroupPoint) -> f64 {
        let v = &xi.x - self.exp_neg_tb(xi.t - eta.t) * &eta.x;
        self.norm_x(v.as_slice()) + (xi.t - eta.t).abs().sqrt()
    }

    /// `omega_Q = |B_1(0)|`, estimated once by rejection sampling.
    pub fn omega_q(&self) -> VolumeEstimate {
        *self
            .omega_q
            .get_or_init(|| self.ball_volume_mc(1.0, OMEGA_Q_SAMPLES, OMEGA_Q_SEED))
    }

    /// `|B_r(xi)| = omega_Q r^{Q+2}`.
    pub fn ball_volume(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(KfpError::invalid("r", format!("must be > 0, got {r}")));
        }
        Ok(self.omega_q().value * r.powi(self.hom_dim as i32 + 2))
    }

    /// Direct Monte-Carlo measure of `B_r(0) = {rho < r}` inside its bounding
    /// box `prod [-r^{q_i}, r^{q_i}] x [-r^2, r^2]`.
    pub fn ball_volume_mc(&self, r: f64, samples: usize, seed: u64) -> VolumeEstimate {
        let mut rng = rng::stream(seed, "ball_volume", 0);
        let n = self.dim();
        let half: Vec<f64> = self.exponents.iter().map(|&q| r.powi(q as i32)).collect();
        let half_t = r * r;
        let box_vol = half.iter().map(|h| 2.0 * h).product::<f64>() * 2.0 * half_t;
        let mut x = vec![0.0; n];
        let mut hits = 0usize;
        for _ in 0..samples {
            for (xi, h) in x.iter_mut().zip(&half) {
                *xi = rng.random_range(-h..*h);
            }
            let t: f64 = rng.random_range(-half_t..half_t);
            if self.norm_x(&x) + t.abs().sqrt() < r {
                hits += 1;
            }
        }
        let p = hits as f64 / samples as f64;
        VolumeEstimate {
            value: p * box_vol,
            std_err: (p * (1.0 - p) / samples as f64).sqrt() * box_vol,
            samples,
        }
    }
}

/// Axis-aligned box in `R^{N+1}`; the last interval is the time range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub x: Vec<(f64, f64)>,
    pub t: (f64, f64),
}

impl DomainBox {
    pub fn cube(n: usize, half: f64, t: (f64, f64)) -> Self {
        Self {
            x: vec![(-half, half); n],
            t,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.x.len() != n {
            return Err(KfpError::Dimension {
                expected: n,
                got: self.x.len(),
            });
        }
        if self.x.iter().chain(std::iter::once(&self.t)).any(|(a, b)| !(b > a)) {
            return Err(KfpError::invalid("domain_box", "empty interval"));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> GroupPoint {
        let x = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|&(a, b)| rng.random_range(a..b)),
        );
        GroupPoint::new(x, rng.random_range(self.t.0..self.t.1))
    }
}

/// Empirical structural constants; every entry is a supremum over samples,
/// hence a lower bound for the true constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralConstants {
    /// Quasi-triangle / quasi-symmetry constant.
    pub kappa: f64,
    /// Equivalence constant for separated triples.
    pub vartheta: f64,
    /// Constant in `||E(t)x|| <= c rho(x,t)`.
    pub c_e: f64,
    /// Constant in `||x - E(t-s)x|| <= c |t-s|^{1/q_N}` on the box.
    pub c_holder: f64,
    /// Constant in `||(E(t)-E(s))x|| <= c |t-s|^{1/q_N}` on the box.
    pub c_holder_ts: f64,
    pub sample_count: usize,
    pub seed: u64,
}

/// Suprema of the ratios defining `kappa`, `vartheta`, `c_E` and the
/// Hölder-in-time bounds for `E`, over `sample_count` draws from `domain`.
pub fn estimate_structural_constants(
    s: &ModelStructure,
    sample_count: usize,
    seed: u64,
    domain: &DomainBox,
) -> Result<StructuralConstants> {
    if sample_count == 0 {
        return Err(KfpError::invalid("sample_count", "must be >= 1"));
    }
    domain.validate(s.dim())?;
    let mut rng = rng::stream(seed, "structural_constants", 0);
    let qn = s.max_exponent() as f64;
    let mut kappa: f64 = 1.0;
    let mut c_e: f64 = 0.0;
    let mut c_h: f64 = 0.0;
    let mut c_hts: f64 = 0.0;
    for _ in 0..sample_count {
        let xi = domain.sample(&mut rng);
        let eta = domain.sample(&mut rng);
        let zeta = domain.sample(&mut rng);
        let d_xe = s.quasi_distance(&xi, &eta);
        let d_ex = s.quasi_distance(&eta, &xi);
        let tri = s.quasi_distance(&xi, &zeta) + s.quasi_distance(&eta, &zeta);
        if tri > 0.0 {
            kappa = kappa.max(d_xe / tri);
        }
        if d_ex > 0.0 {
            kappa = kappa.max(d_xe / d_ex);
        }
        let rho = s.hom_norm(&xi);
        if rho > 0.0 {
            let ex = s.exp_neg_tb(xi.t) * &xi.x;
            c_e = c_e.max(s.norm_x(ex.as_slice()) / rho);
        }
        let dt = (xi.t - eta.t).abs();
        if dt > 0.0 {
            let scale = dt.powf(1.0 / qn);
            let v = &xi.x - s.exp_neg_tb(xi.t - eta.t) * &xi.x;
            c_h = c_h.max(s.norm_x(v.as_slice()) / scale);
            let w = (s.exp_neg_tb(xi.t) - s.exp_neg_tb(eta.t)) * &zeta.x;
            c_hts = c_hts.max(s.norm_x(w.as_slice()) / scale);
        }
    }
    // vartheta: triples with d(xi1, eta) >= 2 kappa d(xi1, xi2) > 0, where xi2 is
    // drawn close to xi1 so the separation condition is met often.
    let mut vartheta: f64 = 1.0;
    let mut accepted = 0usize;
    let mut rng = rng::stream(seed, "structural_constants", 1);
    for _ in 0..sample_count {
        let xi1 = domain.sample(&mut rng);
        let eta = domain.sample(&mut rng);
        let lambda: f64 = 10f64.powf(rng.random_range(-3.0..0.0));
        let w = domain.sample(&mut rng);
        let xi2 = s.compose(&xi1, &s.dilate(lambda, &w)?);
        let d12 = s.quasi_distance(&xi1, &xi2);
        let d1 = s.quasi_distance(&xi1, &eta);
        let d2 = s.quasi_distance(&xi2, &eta);
        if d12 > 0.0 && d1 >= 2.0 * kappa * d12 && d2 > 0.0 {
            accepted += 1;
            vartheta = vartheta.max(d1 / d2).max(d2 / d1);
        }
    }
    let _ = accepted;
    Ok(StructuralConstants {
        kappa,
        vartheta,
        c_e,
        c_holder: c_h,
        c_holder_ts: c_hts,
        sample_count,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kolmogorov() -> ModelStructure {
        ModelStructure::build(&[1, 1], None).unwrap()
    }

    #[test]
    fn kolmogorov_structure() {
        let s = kolmogorov();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.b(), &DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
        assert_eq!(s.exponents(), &[1, 3]);
        assert_eq!(s.hom_dim(), 4);
    }

    #[test]
    fn heat_structure() {
        let s = ModelStructure::build(&[1], None).unwrap();
        assert_eq!(s.b(), &DMatrix::zeros(1, 1));
        assert_eq!(s.exponents(), &[1]);
        assert_eq!(s.hom_dim(), 1);
        assert_eq!(s.exp_neg_tb(3.0), DMatrix::identity(1, 1));
    }

    #[test]
    fn explicit_block_structure() {
        let s = ModelStructure::build(&[2, 1], Some(vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.0])]))
            .unwrap();
        assert_eq!(s.exponents(), &[1, 1, 3]);
        assert_eq!(s.hom_dim(), 5);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            ModelStructure::build(&[1, 2], None),
            Err(KfpError::NonMonotoneBlocks(_))
        ));
        let bad_shape = ModelStructure::build(&[2, 1], Some(vec![DMatrix::zeros(2, 2)]));
        assert!(matches!(bad_shape, Err(KfpError::BlockShape { index: 1, .. })));
        let deficient = ModelStructure::build(&[2, 2], Some(vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])]));
        assert!(matches!(
            deficient,
            Err(KfpError::RankDeficient { index: 1, rank: 1, required: 2 })
        ));
    }

    #[test]
    fn exponential_of_kolmogorov_drift() {
        let s = kolmogorov();
        let t = 1.7;
        assert_eq!(s.exp_neg_tb(t), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -t, 1.0]));
        assert_eq!(s.exp_neg_tb(0.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn exponential_homogeneity() {
        let s = kolmogorov();
        let (lambda, t) = (2.0, 0.3);
        let lhs = s.exp_neg_tb(lambda * lambda * t);
        let rhs = s.d0(lambda) * s.exp_neg_tb(t) * s.d0(1.0 / lambda);
        assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm());
    }

    #[test]
    fn inverse_of_sample_point() {
        let s = kolmogorov();
        let a = GroupPoint::from_slice(&[1.0, 0.0], 1.0);
        let inv = s.inverse(&a);
        assert_eq!(inv, GroupPoint::from_slice(&[-1.0, -1.0], -1.0));
        let e = s.compose(&inv, &a);
        assert!(e.x.norm() < 1e-15 && e.t == 0.0);
    }

    #[test]
    fn dilation_and_norm_examples() {
        let s = kolmogorov();
        let p = GroupPoint::from_slice(&[1.0, 1.0], 1.0);
        let d = s.dilate(2.0, &p).unwrap();
        assert_eq!(d, GroupPoint::from_slice(&[2.0, 8.0], 4.0));
        assert!((s.hom_norm(&d) - 2.0 * s.hom_norm(&p)).abs() < 1e-14);
        assert!((s.hom_norm(&GroupPoint::from_slice(&[1.0, 8.0], 4.0)) - 5.0).abs() < 1e-14);
        assert_eq!(s.hom_norm(&GroupPoint::origin(2)), 0.0);
        assert_eq!(s.dilate(1.0, &p).unwrap(), p);
        assert!(s.dilate(0.0, &p).is_err());
    }

    #[test]
    fn same_time_distance_is_symmetric() {
        let s = kolmogorov();
        let a = GroupPoint::from_slice(&[0.3, -0.2], 0.4);
        let b = GroupPoint::from_slice(&[-0.1, 0.5], 0.4);
        let d = s.quasi_distance(&a, &b);
        assert_eq!(d, s.quasi_distance(&b, &a));
        assert!((d - s.norm_x(&[0.4, -0.7])).abs() < 1e-15);
    }

    #[test]
    fn heat_case_kappa_at_least_one() {
        let s = ModelStructure::build(&[1], None).unwrap();
        let c = estimate_structural_constants(&s, 2000, 3, &DomainBox::cube(1, 1.0, (0.0, 1.0))).unwrap();
        assert!(c.kappa >= 1.0);
        assert_eq!(c.c_holder, 0.0);
    }

    #[test]
    fn empty_box_rejected() {
        let s = kolmogorov();
        let b = DomainBox { x: vec![(0.0, 0.0), (0.0, 1.0)], t: (0.0, 1.0) };
        assert!(estimate_structural_constants(&s, 10, 1, &b).is_err());
    }

    #[test]
    fn doc_round_trip_and_validation() {
        let s = kolmogorov();
        let doc = s.to_doc();
        let json = serde_json::to_string(&doc).unwrap();
        assert_eq!(json, r#"{"m":[1,1],"blocks":[[[1.0]]],"exponents":[1,3],"Q":4}"#);
        let back = ModelStructure::from_doc(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, s);
        let bad: StructureDoc = serde_json::from_str(r#"{"m":[1,2]}"#).unwrap();
        match ModelStructure::from_doc(&bad) {
            Err(KfpError::Config { path, .. }) => assert_eq!(path, "m"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
