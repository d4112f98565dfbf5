use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::basis::StateBasis;
use crate::curve::ForwardCurve;
use crate::error::{Error, Result};
use crate::model::{JumpDiffusionModel, JumpMeasure};

/// Maturity loadings at one `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingValues {
    /// `H_k(τ) = ∫₀^τ h_k(u) du`
    pub big: DVector<f64>,
    /// `h_k(τ)`
    pub value: DVector<f64>,
    /// `h_k'(τ)`
    pub slope: DVector<f64>,
}

/// The maturity functions `h_k` of a separable family, with their
/// integrals and derivatives.
pub trait Loadings: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn max_maturity(&self) -> f64 {
        f64::INFINITY
    }

    /// Values at `τ`; callers keep `τ` within `[0, max_maturity]`.
    fn at(&self, tau: f64) -> LoadingValues;
}

type LoadingFn = Arc<dyn Fn(f64) -> LoadingValues + Send + Sync>;

/// Loadings given in closed form.
#[derive(Clone)]
pub struct ClosedFormLoadings {
    len: usize,
    f: LoadingFn,
}

impl ClosedFormLoadings {
    pub fn new<F>(len: usize, f: F) -> Self
    where
        F: Fn(f64) -> LoadingValues + Send + Sync + 'static,
    {
        ClosedFormLoadings { len, f: Arc::new(f) }
    }
}

impl Loadings for ClosedFormLoadings {
    fn len(&self) -> usize {
        self.len
    }

    fn at(&self, tau: f64) -> LoadingValues {
        (self.f)(tau)
    }
}

/// `G(τ, x) = Σ h_k(τ) φ_k(x)`.
#[derive(Clone)]
pub struct SeparableFamily {
    dim: usize,
    basis: Vec<StateBasis>,
    loadings: Arc<dyn Loadings>,
}

impl std::fmt::Debug for SeparableFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SeparableFamily")
            .field("dim", &self.dim)
            .field("basis", &self.basis)
            .finish_non_exhaustive()
    }
}

pub(crate) fn check_basis(dim: usize, basis: &[StateBasis]) -> Result<()> {
    if basis.is_empty() {
        return Err(Error::invalid("separable family needs at least one basis function"));
    }
    if let Some(i) = basis.iter().filter_map(StateBasis::max_index).find(|&i| i >= dim) {
        return Err(Error::invalid(format!("basis references x{} but the state has dimension {dim}", i + 1)));
    }
    Ok(())
}

impl SeparableFamily {
    pub fn new(dim: usize, basis: Vec<StateBasis>, loadings: Arc<dyn Loadings>) -> Result<Self> {
        check_basis(dim, &basis)?;
        if loadings.len() != basis.len() {
            return Err(Error::invalid(format!(
                "{} loadings for {} basis functions",
                loadings.len(),
                basis.len()
            )));
        }
        Ok(SeparableFamily { dim, basis, loadings })
    }

    pub fn basis(&self) -> &[StateBasis] {
        &self.basis
    }

    pub fn loadings(&self) -> &dyn Loadings {
        self.loadings.as_ref()
    }

    /// `(φ_1(x), …, φ_m(x))`
    pub fn phi(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.basis.len(), self.basis.iter().map(|b| b.value(x)))
    }

    fn combine(&self, weights: &DVector<f64>, x: &[f64]) -> f64 {
        weights.iter().zip(&self.basis).map(|(w, b)| w * b.value(x)).sum()
    }

    fn combine_gradient(&self, weights: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for (w, b) in weights.iter().zip(&self.basis) {
            if *w != 0.0 && !matches!(b, StateBasis::Constant) {
                g.axpy(*w, &b.gradient(x), 1.0);
            }
        }
        g
    }
}

impl ForwardCurve for SeparableFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_maturity(&self) -> f64 {
        self.loadings.max_maturity()
    }

    fn value(&self, tau: f64, x: &[f64]) -> f64 {
        self.combine(&self.loadings.at(tau).value, x)
    }

    fn dtau(&self, tau: f64, x: &[f64]) -> f64 {
        self.combine(&self.loadings.at(tau).slope, x)
    }

    fn gradient(&self, tau: f64, x: &[f64]) -> DVector<f64> {
        self.combine_gradient(&self.loadings.at(tau).value, x)
    }

    fn hessian(&self, tau: f64, x: &[f64]) -> DMatrix<f64> {
        let h = self.loadings.at(tau).value;
        let mut hess = DMatrix::zeros(self.dim, self.dim);
        for (w, b) in h.iter().zip(&self.basis) {
            if matches!(b, StateBasis::Quadratic(..) | StateBasis::Callable { .. }) {
                hess += b.hessian(x) * *w;
            }
        }
        hess
    }

    fn integral(&self, tau: f64, x: &[f64]) -> f64 {
        self.combine(&self.loadings.at(tau).big, x)
    }

    fn gradient_integral(&self, tau: f64, x: &[f64]) -> DVector<f64> {
        self.combine_gradient(&self.loadings.at(tau).big, x)
    }
}

fn check_weights(basis: &[StateBasis], weights: &[f64]) -> Result<()> {
    if weights.len() != basis.len() {
        return Err(Error::invalid(format!(
            "{} loadings for {} basis functions",
            weights.len(),
            basis.len()
        )));
    }
    Ok(())
}

/// `Γᵢ = Σ_k H_k ∂φ_k/∂xᵢ`
pub fn gamma_big(family: &SeparableFamily, big: &[f64], x: &[f64], i: usize) -> Result<f64> {
    check_weights(&family.basis, big)?;
    if i >= family.dim || x.len() != family.dim {
        return Err(Error::invalid("index or state dimension out of range"));
    }
    Ok(big.iter().zip(&family.basis).map(|(w, b)| w * b.partial(x, i)).sum())
}

/// `Λᵢⱼ = Σ_k H_k ∂²φ_k/∂xᵢ∂xⱼ`
pub fn lambda_big(family: &SeparableFamily, big: &[f64], x: &[f64], i: usize, j: usize) -> Result<f64> {
    check_weights(&family.basis, big)?;
    if i >= family.dim || j >= family.dim || x.len() != family.dim {
        return Err(Error::invalid("index or state dimension out of range"));
    }
    Ok(big
        .iter()
        .zip(&family.basis)
        .filter(|(_, b)| matches!(b, StateBasis::Quadratic(..) | StateBasis::Callable { .. }))
        .map(|(w, b)| w * b.hessian(x)[(i, j)])
        .sum())
}

/// `∫ (1 - exp(-⟨v, φ(x+ξ) - φ(x)⟩)) Q(dξ)`.
pub fn psi_separable(
    basis: &[StateBasis],
    jumps: &JumpMeasure,
    v: &[f64],
    x: &[f64],
    tol: f64,
) -> Result<f64> {
    check_weights(basis, v)?;
    if jumps.dim() != x.len() {
        return Err(Error::invalid("jump measure and state dimensions differ"));
    }
    if jumps.is_dirac_zero() || v.iter().all(|w| *w == 0.0) {
        return Ok(0.0);
    }
    jumps.expect(
        &|xi| {
            let y: Vec<f64> = x.iter().zip(xi).map(|(a, b)| a + b).collect();
            let dot: f64 = v.iter().zip(basis).map(|(w, b)| w * b.increment(x, &y)).sum();
            -(-dot).exp_m1()
        },
        tol,
    )
}

/// The integrated separable condition, left minus right side:
///
/// ```text
/// Σ (h_k(τ) - h_k(0)) φ_k(x) - [Σ Γᵢbᵢ + Σ aᵢⱼ(Λᵢⱼ - ΓᵢΓⱼ) + λ(x) Ψ(H(τ), x)]
/// ```
///
/// Its maturity derivative is minus the general consistency residual.
pub fn separable_residual(
    model: &JumpDiffusionModel,
    family: &SeparableFamily,
    tau: f64,
    x: &[f64],
    tol: f64,
) -> Result<f64> {
    if model.dim() != family.dim || x.len() != family.dim {
        return Err(Error::invalid("model, family and state dimensions differ"));
    }
    if !(tau >= 0.0) || tau > family.max_maturity() {
        return Err(Error::Range {
            tau,
            max: family.max_maturity(),
        });
    }
    let now = family.loadings.at(tau);
    let start = family.loadings.at(0.0);
    let lhs = family.combine(&(&now.value - &start.value), x);
    let gamma = family.combine_gradient(&now.big, x);
    let b = model.drift_at(x);
    let a = model.covariance_at(x);
    let mut rhs = gamma.dot(&b) - (gamma.transpose() * &a * &gamma)[0];
    if a.iter().any(|v| *v != 0.0) {
        let mut lambda_mat = DMatrix::zeros(family.dim, family.dim);
        for (w, basis) in now.big.iter().zip(&family.basis) {
            if matches!(basis, StateBasis::Quadratic(..) | StateBasis::Callable { .. }) {
                lambda_mat += basis.hessian(x) * *w;
            }
        }
        rhs += a.component_mul(&lambda_mat).sum();
    }
    let intensity = model.intensity_at(x);
    if intensity != 0.0 {
        let psi = psi_separable(&family.basis, model.jumps(), now.big.as_slice(), x, tol)
            .map_err(|e| e.into_regularity(tau))?;
        rhs += intensity * psi;
    }
    Ok(lhs - rhs)
}
