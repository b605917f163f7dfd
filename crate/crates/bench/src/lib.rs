//! Fixtures shared by the benchmarks.

use kfplab_core::verify::Scenario;
use kfplab_core::{CoefficientModel, ModelStructure};
use nalgebra::DMatrix;

/// Constant-coefficient model with `A0 = a I` on the block structure `m`.
pub fn constant_model(m: &[usize], a: f64) -> CoefficientModel {
    let s = ModelStructure::build(m, None).expect("valid block sizes");
    let q = s.q();
    CoefficientModel::constant(s, DMatrix::identity(q, q) * a, 0.5).expect("elliptic")
}

/// A shipped scenario from `scenarios/`.
pub fn scenario(name: &str) -> Scenario {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).expect("shipped scenario loads")
}
