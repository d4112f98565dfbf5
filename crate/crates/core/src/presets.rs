//! Named one-factor short-rate models used as fixtures.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::model::{CoefficientFunction, DomainBox, JumpDiffusionModel, JumpMeasure};

/// `h(0)` of the affine family whose short rate is the state itself.
pub const SHORT_RATE_THETA: [f64; 2] = [0.0, 1.0];

fn mean_reverting(kappa: f64, mu: f64) -> Result<CoefficientFunction> {
    CoefficientFunction::affine(vec![kappa * mu], DMatrix::from_element(1, 1, -kappa))
}

/// `dX = κ(μ - X) dt + σ dW`.
pub fn vasicek(kappa: f64, mu: f64, sigma: f64) -> Result<JumpDiffusionModel> {
    JumpDiffusionModel::new(
        DomainBox::unbounded(1),
        mean_reverting(kappa, mu)?,
        CoefficientFunction::constant(vec![sigma], 1),
        CoefficientFunction::zero(1, 1),
        JumpMeasure::dirac_zero(1),
    )
}

/// `dX = κ(μ - X) dt + σ √X dW` on `X ≥ 0`.
pub fn cir(kappa: f64, mu: f64, sigma: f64) -> Result<JumpDiffusionModel> {
    JumpDiffusionModel::new(
        DomainBox::new(vec![0.0], vec![f64::INFINITY])?,
        mean_reverting(kappa, mu)?,
        CoefficientFunction::callable(1, 1, move |x, out| out[0] = sigma * x[0].max(0.0).sqrt()),
        CoefficientFunction::zero(1, 1),
        JumpMeasure::dirac_zero(1),
    )
}

/// Vasicek with jumps of intensity `intensity` and exponential sizes of
/// rate `rate`.
pub fn jump_vasicek(kappa: f64, mu: f64, sigma: f64, intensity: f64, rate: f64) -> Result<JumpDiffusionModel> {
    vasicek(kappa, mu, sigma)?
        .with_jumps(JumpMeasure::exponential(vec![rate])?)?
        .with_intensity(CoefficientFunction::constant(vec![intensity], 1))
}

/// `dX = dJ`: no drift or diffusion, jumps of intensity `intensity` with
/// exponential sizes of rate `rate`.
pub fn pure_jump(intensity: f64, rate: f64) -> Result<JumpDiffusionModel> {
    JumpDiffusionModel::new(
        DomainBox::unbounded(1),
        CoefficientFunction::zero(1, 1),
        CoefficientFunction::zero(1, 1),
        CoefficientFunction::constant(vec![intensity], 1),
        JumpMeasure::exponential(vec![rate])?,
    )
}

/// The model with no dynamics at all.
pub fn still(dim: usize) -> Result<JumpDiffusionModel> {
    JumpDiffusionModel::new(
        DomainBox::unbounded(dim),
        CoefficientFunction::zero(dim, dim),
        CoefficientFunction::zero(dim * dim, dim),
        CoefficientFunction::zero(1, dim),
        JumpMeasure::dirac_zero(dim),
    )
}
