//! Numerical laboratory for degenerate Kolmogorov-Fokker-Planck operators
//!
//! `L u = sum a_ij(x,t) u_{x_i x_j} + <Bx, grad u> - u_t`
//!
//! with diffusion in the first `q` of `N` spatial directions. The crate
//! provides the homogeneous group geometry attached to `B`, the calculus of
//! partial moduli of continuity, the explicit Gaussian fundamental solution
//! for time-dependent coefficients, representation formulas for `u`, its
//! derivatives and the singular operator `T_ij`, and best-constant checkers
//! for the continuity estimates these formulas imply.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod kernel;
pub mod moduli;
pub mod quadrature;
pub mod report;
pub mod representation;
pub mod rng;
pub mod verify;

pub use error::{KfpError, Result};
pub use geometry::{
    estimate_structural_constants, DomainBox, GroupPoint, ModelStructure, StructuralConstants,
    StructureDoc,
};
pub use kernel::{CoefficientModel, KernelWorkspace};
pub use moduli::{Modulus, SampledField};
pub use report::EstimateReport;
pub use representation::{ManufacturedSolution, SourceSpec};
pub use verify::{ReportBundle, Scenario};
