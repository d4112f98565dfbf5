//! Separable families `G(τ, x) = Σ h_k(τ) φ_k(x)`: the integrated
//! consistency condition, the generalized Riccati equations for the
//! maturity loadings and their numerical solution, and bond pricing.

mod basis;
mod family;
mod gre;
mod pricing;
mod solver;

pub use basis::StateBasis;
pub use family::{
    gamma_big, lambda_big, psi_separable, separable_residual, ClosedFormLoadings, LoadingValues, Loadings,
    SeparableFamily,
};
pub use gre::{build_gre, build_ode_system, select_anchors, GreSystem, JumpTerm, ANCHOR_CONDITION_LIMIT};
pub use pricing::{affine_consistency_residual, bond_price, write_yield_csv, yield_curve, YieldPoint};
pub use solver::{solve_gre, solve_gre_fixed, HPath, SolverDiagnostics, BLOW_UP};

use std::sync::Arc;

impl SeparableFamily {
    /// The family whose loadings are a solved path.
    pub fn from_path(path: HPath) -> Self {
        let dim = path.dim();
        let basis = path.basis().to_vec();
        SeparableFamily::new(dim, basis, Arc::new(path)).expect("a solved path matches its own basis")
    }
}
