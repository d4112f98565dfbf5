//! The Nelson–Siegel forward curve `G(τ, x) = x₁ + (x₂ + x₃τ)e^{-x₄τ}`
//! and the numerical demonstration that no non-deterministic
//! jump-diffusion is consistent with it.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::ForwardCurve;
use crate::error::{Error, Result};
use crate::model::{CoefficientFunction, JumpDiffusionModel, JumpMeasure};
use crate::output::write_csv;

/// A point of the Nelson–Siegel state space `ℝ³ × (0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NsState {
    /// `x₁`, the long rate.
    pub level: f64,
    /// `x₂`, the short-end offset.
    pub slope: f64,
    /// `x₃`, the hump.
    pub curvature: f64,
    /// `x₄ > 0`, the decay rate.
    pub decay: f64,
}

impl NsState {
    pub fn new(level: f64, slope: f64, curvature: f64, decay: f64) -> Result<Self> {
        Self::from_slice(&[level, slope, curvature, decay])
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != 4 || x.iter().any(|v| !v.is_finite()) || !(x[3] > 0.0) {
            return Err(Error::OutOfDomain {
                what: "Nelson-Siegel state space (decay must be > 0)".into(),
                point: x.to_vec(),
            });
        }
        Ok(NsState {
            level: x[0],
            slope: x[1],
            curvature: x[2],
            decay: x[3],
        })
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.level, self.slope, self.curvature, self.decay]
    }
}

/// `∫₀^τ u^k e^{-cu} du` for `k = 0, 1, 2`. Valid for any real `c`.
fn moments(c: f64, tau: f64) -> [f64; 3] {
    let z = c * tau;
    if z.abs() < 0.5 {
        let mut out = [0.0; 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut term = 1.0;
            let mut sum = 0.0;
            for n in 0..30 {
                sum += term / (n + k + 1) as f64;
                term *= -z / (n + 1) as f64;
            }
            *slot = tau.powi(k as i32 + 1) * sum;
        }
        return out;
    }
    let e = (-z).exp();
    [
        (1.0 - e) / c,
        (1.0 - e * (1.0 + z)) / (c * c),
        (2.0 - e * (2.0 + 2.0 * z + z * z)) / (c * c * c),
    ]
}

fn value_at(x: &[f64], tau: f64) -> f64 {
    x[0] + (x[1] + x[2] * tau) * (-x[3] * tau).exp()
}

fn integral_at(x: &[f64], tau: f64) -> f64 {
    let m = moments(x[3], tau);
    x[0] * tau + x[1] * m[0] + x[2] * m[1]
}

/// `G(τ, x)`.
pub fn ns_value(x: &NsState, tau: f64) -> f64 {
    value_at(&x.to_array(), tau)
}

/// Closed-form derivatives of the curve at one `(τ, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NsDerivatives {
    pub dtau: f64,
    pub gradient: Vector4<f64>,
    pub hessian: Matrix4<f64>,
    /// `∫₀^τ ∇ₓG(u, x) du`
    pub gradient_integral: Vector4<f64>,
}

pub fn ns_derivatives(x: &NsState, tau: f64) -> NsDerivatives {
    let [_, x2, x3, x4] = x.to_array();
    let e = (-x4 * tau).exp();
    let hump = x2 + x3 * tau;
    let mut hessian = Matrix4::zeros();
    hessian[(1, 3)] = -tau * e;
    hessian[(2, 3)] = -tau * tau * e;
    hessian[(3, 1)] = hessian[(1, 3)];
    hessian[(3, 2)] = hessian[(2, 3)];
    hessian[(3, 3)] = tau * tau * hump * e;
    let m = moments(x4, tau);
    NsDerivatives {
        dtau: (x3 - x4 * x2 - x3 * x4 * tau) * e,
        gradient: Vector4::new(1.0, e, tau * e, -tau * hump * e),
        hessian,
        gradient_integral: Vector4::new(tau, m[0], m[1], -(x2 * m[1] + x3 * m[2])),
    }
}

/// The Nelson–Siegel family as a [`ForwardCurve`] over `ℝ⁴`.
///
/// Formulas are evaluated for any `x₄`, so post-jump states with a
/// non-positive decay are priced (and may blow up) rather than rejected;
/// `contains` reports the proper state space.
#[derive(Debug, Clone, Copy, Default)]
pub struct NelsonSiegel;

impl ForwardCurve for NelsonSiegel {
    fn dim(&self) -> usize {
        4
    }

    fn contains(&self, x: &[f64]) -> bool {
        NsState::from_slice(x).is_ok()
    }

    fn value(&self, tau: f64, x: &[f64]) -> f64 {
        value_at(x, tau)
    }

    fn dtau(&self, tau: f64, x: &[f64]) -> f64 {
        (x[2] - x[3] * x[1] - x[2] * x[3] * tau) * (-x[3] * tau).exp()
    }

    fn gradient(&self, tau: f64, x: &[f64]) -> DVector<f64> {
        let d = derivatives_unchecked(x, tau);
        DVector::from_column_slice(d.gradient.as_slice())
    }

    fn hessian(&self, tau: f64, x: &[f64]) -> DMatrix<f64> {
        let d = derivatives_unchecked(x, tau);
        DMatrix::from_column_slice(4, 4, d.hessian.as_slice())
    }

    fn integral(&self, tau: f64, x: &[f64]) -> f64 {
        integral_at(x, tau)
    }

    fn gradient_integral(&self, tau: f64, x: &[f64]) -> DVector<f64> {
        let d = derivatives_unchecked(x, tau);
        DVector::from_column_slice(d.gradient_integral.as_slice())
    }
}

fn derivatives_unchecked(x: &[f64], tau: f64) -> NsDerivatives {
    let state = NsState {
        level: x[0],
        slope: x[1],
        curvature: x[2],
        decay: x[3],
    };
    ns_derivatives(&state, tau)
}

/// `-∫₀^τ (G(u, x+ξ) - G(u, x)) du`.
pub fn ns_log_f(x: &NsState, xi: &[f64], tau: f64) -> Result<f64> {
    let y = post_jump(x, xi)?;
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("maturity must be >= 0, got {tau}")));
    }
    Ok(-(integral_at(&y, tau) - integral_at(&x.to_array(), tau)))
}

/// `[G(τ, x+ξ) - G(τ, x)] · exp(log f)`.
pub fn ns_delta0(x: &NsState, xi: &[f64], tau: f64) -> Result<f64> {
    let y = post_jump(x, xi)?;
    let dg = value_at(&y, tau) - ns_value(x, tau);
    if dg == 0.0 {
        return Ok(0.0);
    }
    Ok(dg * ns_log_f(x, xi, tau)?.exp())
}

fn post_jump(x: &NsState, xi: &[f64]) -> Result<[f64; 4]> {
    if xi.len() != 4 {
        return Err(Error::invalid(format!("jump has dimension {}, expected 4", xi.len())));
    }
    let mut y = x.to_array();
    for (v, d) in y.iter_mut().zip(xi) {
        *v += d;
    }
    if !(y[3] > 0.0) {
        return Err(Error::OutOfDomain {
            what: "Nelson-Siegel state space (post-jump decay must be > 0)".into(),
            point: y.to_vec(),
        });
    }
    Ok(y)
}

const DEGREES: usize = 6;

/// `Σ c[k][p] τ^p e^{-kx₄τ}` for `k ≤ 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ExpPoly([[f64; DEGREES]; 3]);

impl ExpPoly {
    fn term(k: usize, p: usize, c: f64) -> Self {
        let mut e = ExpPoly::default();
        e.0[k][p] = c;
        e
    }

    fn add(mut self, other: &ExpPoly) -> Self {
        for (row, o) in self.0.iter_mut().zip(&other.0) {
            for (v, w) in row.iter_mut().zip(o) {
                *v += w;
            }
        }
        self
    }

    fn scale(mut self, s: f64) -> Self {
        self.0.iter_mut().flatten().for_each(|v| *v *= s);
        self
    }

    fn mul(&self, other: &ExpPoly) -> Self {
        let mut out = ExpPoly::default();
        for k1 in 0..3 {
            for p1 in 0..DEGREES {
                let c1 = self.0[k1][p1];
                if c1 == 0.0 {
                    continue;
                }
                for k2 in 0..3 {
                    for p2 in 0..DEGREES {
                        let c2 = other.0[k2][p2];
                        if c2 == 0.0 {
                            continue;
                        }
                        assert!(k1 + k2 < 3 && p1 + p2 < DEGREES, "exp-polynomial degree overflow");
                        out.0[k1 + k2][p1 + p2] += c1 * c2;
                    }
                }
            }
        }
        out
    }

    fn sum<'a>(items: impl IntoIterator<Item = &'a ExpPoly>) -> Self {
        items.into_iter().fold(ExpPoly::default(), |acc, e| acc.add(e))
    }
}

/// Exp-polynomial forms of `∂τG`, `∇ₓG`, the Hessian and `∫₀^τ ∇ₓG`.
struct Symbolic {
    dtau: ExpPoly,
    gradient: [ExpPoly; 4],
    hessian: [[ExpPoly; 4]; 4],
    gradient_integral: [ExpPoly; 4],
}

fn symbolic(x: &NsState) -> Symbolic {
    let [_, x2, x3, c] = x.to_array();
    let t = ExpPoly::term;
    let gradient = [
        t(0, 0, 1.0),
        t(1, 0, 1.0),
        t(1, 1, 1.0),
        t(1, 1, -x2).add(&t(1, 2, -x3)),
    ];
    let mut hessian = [[ExpPoly::default(); 4]; 4];
    hessian[1][3] = t(1, 1, -1.0);
    hessian[3][1] = hessian[1][3];
    hessian[2][3] = t(1, 2, -1.0);
    hessian[3][2] = hessian[2][3];
    hessian[3][3] = t(1, 2, x2).add(&t(1, 3, x3));
    // ∫₀^τ u^k e^{-cu} du
    let m0 = t(0, 0, 1.0 / c).add(&t(1, 0, -1.0 / c));
    let m1 = t(0, 0, 1.0 / (c * c)).add(&t(1, 0, -1.0 / (c * c))).add(&t(1, 1, -1.0 / c));
    let m2 = t(0, 0, 2.0 / c.powi(3))
        .add(&t(1, 0, -2.0 / c.powi(3)))
        .add(&t(1, 1, -2.0 / (c * c)))
        .add(&t(1, 2, -1.0 / c));
    let gradient_integral = [t(0, 1, 1.0), m0, m1, m1.scale(-x2).add(&m2.scale(-x3))];
    Symbolic {
        dtau: t(1, 0, x3 - c * x2).add(&t(1, 1, -x3 * c)),
        gradient,
        hessian,
        gradient_integral,
    }
}

/// The diffusion-and-drift side of the Nelson–Siegel consistency condition
/// as an exp-polynomial in `τ`:
///
/// ```text
/// ∂τG - Σ bᵢ∂ᵢG - Σ aᵢⱼ∂ᵢⱼG + 2 Σ aᵢⱼ ∂ᵢG ∫₀^τ ∂ⱼG du
/// ```
fn q_form(x: &NsState, a: &Matrix4<f64>, b: &Vector4<f64>) -> ExpPoly {
    let s = symbolic(x);
    let mut terms = vec![s.dtau];
    for i in 0..4 {
        terms.push(s.gradient[i].scale(-b[i]));
        for j in 0..4 {
            if a[(i, j)] != 0.0 {
                terms.push(s.hessian[i][j].scale(-a[(i, j)]));
                terms.push(s.gradient[i].mul(&s.gradient_integral[j]).scale(2.0 * a[(i, j)]));
            }
        }
    }
    ExpPoly::sum(&terms)
}

/// Coefficients of `q₀(τ) + q₁(τ)e^{-x₄τ} + q₂(τ)e^{-2x₄τ}`, with
/// `q_k(τ) = Σ_p q[k][p] τ^p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NsQCoefficients {
    /// `q⁰₀, q⁰₁`
    pub q0: [f64; 2],
    /// `q¹₀ … q¹₃`
    pub q1: [f64; 4],
    /// `q²₀ … q²₄`
    pub q2: [f64; 5],
}

impl NsQCoefficients {
    /// `(name, value)` pairs; `q{k}_{p}` multiplies `τ^p e^{-k x₄ τ}`.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let groups: [&[f64]; 3] = [&self.q0, &self.q1, &self.q2];
        groups
            .iter()
            .enumerate()
            .flat_map(|(k, g)| g.iter().enumerate().map(move |(p, v)| (format!("q{k}_{p}"), *v)))
            .collect()
    }

    /// Evaluates the q-form at `τ` for decay rate `decay`.
    pub fn eval(&self, tau: f64, decay: f64) -> f64 {
        let poly = |c: &[f64]| c.iter().rev().fold(0.0, |acc, v| acc * tau + v);
        let e = (-decay * tau).exp();
        poly(&self.q0) + e * (poly(&self.q1) + e * poly(&self.q2))
    }
}

/// q-coefficients obtained by expanding the condition term by term.
pub fn ns_q_coefficients(x: &NsState, a: &Matrix4<f64>, b: &Vector4<f64>) -> NsQCoefficients {
    let q = q_form(x, a, b).0;
    debug_assert!(q[0][2..].iter().all(|v| *v == 0.0));
    NsQCoefficients {
        q0: [q[0][0], q[0][1]],
        q1: [q[1][0], q[1][1], q[1][2], q[1][3]],
        q2: [q[2][0], q[2][1], q[2][2], q[2][3], q[2][4]],
    }
}

/// q-coefficients exactly as printed in the published derivation, kept
/// for comparison with [`ns_q_coefficients`].
pub fn ns_q_coefficients_published(x: &NsState, a: &Matrix4<f64>, b: &Vector4<f64>) -> NsQCoefficients {
    let [_, x2, x3, x4] = x.to_array();
    let a = |i: usize, j: usize| a[(i - 1, j - 1)];
    let b = |i: usize| b[i - 1];
    let (p2, p3) = (x4 * x4, x4 * x4 * x4);
    let q0 = [
        -b(1) + 2.0 * a(1, 2) / x4 + 2.0 * a(1, 3) / p2 - 2.0 * x2 / x4 - 4.0 * a(1, 4) * x3 / p3,
        2.0 * a(1, 1),
    ];
    let q1 = [
        -b(2) - x2 * x4 + x3 + 2.0 * a(2, 2) / x4 - 2.0 * a(1, 2) / x4 - 2.0 * a(2, 4) * x2 / p2
            - 2.0 * a(2, 4) * x3 / p3
            - 2.0 * a(1, 3) / p2
            + 2.0 * a(1, 4) * x2 / p2
            + 4.0 * a(1, 4) * x3 / p3
            + 2.0 * a(2, 3) / p2,
        -b(3) + b(4) * x2 - x3 * x4 + 2.0 * a(1, 2) + 2.0 * a(2, 4) - 2.0 * a(1, 3) / x4
            + 2.0 * a(3, 3) / p2
            + 4.0 * a(3, 4) * x2 / p2
            + 2.0 * a(3, 4) * x3 / p2
            + 2.0 * a(4, 4) * x2 * x2 / p2
            + 4.0 * a(4, 4) * x2 * x3 / p3
            + 2.0 * a(1, 4) * x2 / x4
            + 4.0 * a(1, 4) * x3 / p2
            + 2.0 * a(2, 3) / p2
            - 2.0 * a(2, 4) * x2 / x4,
        b(4) * x3 - a(4, 4) * x2 + 2.0 * a(1, 3) + 2.0 * a(3, 4)
            - 2.0 * a(1, 4) * x2
            - 2.0 * a(2, 4) * x3 / x4
            - 2.0 * a(3, 4) * x3 / p2
            + 2.0 * a(4, 4) * x2 * x3 / p2
            + 4.0 * a(4, 4) * x3 * x3 / p3
            + 2.0 * a(1, 4) * x3 / x4,
        -a(4, 4) * x3 - 2.0 * a(1, 4) * x3,
    ];
    let q2 = [
        -2.0 * a(2, 2) / x4 - 2.0 * a(2, 3) / p2 + 2.0 * a(2, 4) * x2 / x4 + 4.0 * a(2, 4) * x3 / p3,
        -4.0 * a(2, 3) / x4 + 4.0 * a(2, 4) * x2 / x4 + 4.0 * a(2, 4) * x3 / p2
            - 2.0 * a(3, 3) / p2
            - 4.0 * a(3, 4) * x2 / p2
            - 4.0 * a(3, 4) * x3 / p3
            - 2.0 * a(4, 4) * x2 * x2 / p3
            - 4.0 * a(4, 4) * x2 * x3 / p3,
        4.0 * a(2, 4) * x3 / x4 - 2.0 * a(3, 3) / x4 - 4.0 * a(3, 4) * x2 / x4 - 6.0 * a(3, 4) * x3 / p2
            - 2.0 * a(4, 4) * x2 * x2 / x4
            - 4.0 * a(4, 4) * x2 * x3 / p2
            - 2.0 * a(4, 4) * x2 * x3 / x4
            - 4.0 * a(4, 4) * x3 * x3 / p3,
        -4.0 * a(3, 4) * x3 / x4 - 4.0 * a(4, 4) * x2 * x3 / x4 - 4.0 * a(4, 4) * x3 * x3 / p2,
        -2.0 * a(4, 4) * x3 * x3 / x4,
    ];
    NsQCoefficients { q0, q1, q2 }
}

/// Largest difference between published and expanded values of one
/// coefficient over a set of probes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QDiscrepancy {
    pub coefficient: String,
    pub max_abs_difference: f64,
    pub agrees: bool,
}

/// Tolerance under which a published coefficient counts as reproduced.
pub const DISCREPANCY_TOL: f64 = 1e-9;

/// Compares the published and expanded coefficients at every probe.
pub fn ns_q_discrepancies(probes: &[(NsState, Matrix4<f64>, Vector4<f64>)]) -> Vec<QDiscrepancy> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    for (x, a, b) in probes {
        let derived = ns_q_coefficients(x, a, b).entries();
        let published = ns_q_coefficients_published(x, a, b).entries();
        if worst.is_empty() {
            worst = derived.iter().map(|(n, _)| (n.clone(), 0.0)).collect();
        }
        for ((slot, (_, d)), (_, p)) in worst.iter_mut().zip(&derived).zip(&published) {
            slot.1 = slot.1.max((d - p).abs());
        }
    }
    worst
        .into_iter()
        .map(|(coefficient, max_abs_difference)| QDiscrepancy {
            coefficient,
            max_abs_difference,
            agrees: max_abs_difference < DISCREPANCY_TOL,
        })
        .collect()
}

/// `∂τG - Σ bᵢ∂ᵢG - Σ aᵢⱼ∂ᵢⱼG + 2 Σ aᵢⱼ ∂ᵢG ∫₀^τ ∂ⱼG du`, evaluated
/// directly from the closed-form derivatives. Consistency requires it to
/// equal `λ(x) ∫ δ₀ dQ`.
pub fn ns_direct_lhs(x: &NsState, a: &Matrix4<f64>, b: &Vector4<f64>, tau: f64) -> Result<f64> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("maturity must be finite and >= 0, got {tau}")));
    }
    let d = ns_derivatives(x, tau);
    let cross = (d.gradient.transpose() * a * d.gradient_integral)[0];
    Ok(d.dtau - d.gradient.dot(b) - a.component_mul(&d.hessian).sum() + 2.0 * cross)
}

/// The drift that makes the curve an exact solution of the deterministic
/// flow at `x`: the least-squares solution of "all q-coefficients vanish"
/// with `a = 0`.
pub fn ns_fitted_drift(x: &NsState) -> Vector4<f64> {
    let zero = Matrix4::zeros();
    let base = ns_q_coefficients(x, &zero, &Vector4::zeros()).entries();
    let mut design = DMatrix::zeros(base.len(), 4);
    for i in 0..4 {
        let unit = Vector4::ith(i, 1.0);
        let shifted = ns_q_coefficients(x, &zero, &unit).entries();
        for (r, ((_, s), (_, b0))) in shifted.iter().zip(&base).enumerate() {
            design[(r, i)] = s - b0;
        }
    }
    let target = DVector::from_iterator(base.len(), base.iter().map(|(_, v)| -v));
    let solution = design
        .svd(true, true)
        .solve(&target, 1e-12)
        .expect("SVD of a 11x4 matrix with computed U and V");
    Vector4::new(solution[0], solution[1], solution[2], solution[3])
}

/// [`ns_fitted_drift`] as a model coefficient.
pub fn ns_fitted_drift_function() -> CoefficientFunction {
    CoefficientFunction::callable(4, 4, |x, out| match NsState::from_slice(x) {
        Ok(state) => out.copy_from_slice(ns_fitted_drift(&state).as_slice()),
        Err(_) => out.fill(f64::NAN),
    })
}

fn check_model(model: &JumpDiffusionModel) -> Result<()> {
    if model.dim() != 4 {
        return Err(Error::invalid(format!(
            "Nelson-Siegel models have a 4-dimensional state, got {}",
            model.dim()
        )));
    }
    Ok(())
}

/// `ns_direct_lhs - λ(x) ∫ δ₀ dQ`; zero exactly when the model is
/// consistent at `(τ, x)`.
///
/// Jumps that can lower the decay rate are rejected when the intensity at
/// `x` is positive.
pub fn ns_consistency_residual(model: &JumpDiffusionModel, x: &NsState, tau: f64, tol: f64) -> Result<f64> {
    check_model(model)?;
    let xs = x.to_array();
    if !model.domain().contains(&xs) {
        return Err(Error::OutOfDomain {
            what: "model domain".into(),
            point: xs.to_vec(),
        });
    }
    let a = Matrix4::from_iterator(model.covariance_at(&xs).iter().copied());
    let b = Vector4::from_iterator(model.drift_at(&xs).iter().copied());
    let lhs = ns_direct_lhs(x, &a, &b, tau)?;
    let intensity = model.intensity_at(&xs);
    let jumps = model.jumps();
    if intensity == 0.0 || jumps.is_dirac_zero() {
        return Ok(lhs);
    }
    if !jumps.is_nonnegative_in(3) {
        return Err(Error::Support(
            "Nelson-Siegel jumps must not lower the decay rate (xi_4 >= 0 almost surely)".into(),
        ));
    }
    let integral = jumps
        .expect(&|xi| ns_delta0(x, xi, tau).unwrap_or(f64::NAN), tol)
        .map_err(|e| e.into_regularity(tau))?;
    Ok(lhs - intensity * integral)
}

/// Result of the moment condition check on a jump measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NsRegularity {
    pub regular: bool,
    pub failing_probe: Option<(f64, f64)>,
}

/// Checks `∫ (1 + |ξ₄|³) e^{-r₂ξ₂ - r₃ξ₃} Q(dξ) < ∞` at each probe `(r₂, r₃)`.
pub fn ns_regularity_check(jumps: &JumpMeasure, probes: &[(f64, f64)], tol: f64) -> Result<NsRegularity> {
    if jumps.dim() != 4 {
        return Err(Error::invalid("Nelson-Siegel jump measures are 4-dimensional"));
    }
    if probes.is_empty() {
        return Err(Error::invalid("regularity check needs at least one probe"));
    }
    for &(r2, r3) in probes {
        if !(r2 >= 0.0 && r3 >= 0.0) {
            return Err(Error::invalid(format!("probe ({r2}, {r3}) must be non-negative")));
        }
        let moment = |xi: &[f64]| (1.0 + xi[3].abs().powi(3)) * (-r2 * xi[1] - r3 * xi[2]).exp();
        if jumps.expect(&moment, tol).is_err() {
            return Ok(NsRegularity {
                regular: false,
                failing_probe: Some((r2, r3)),
            });
        }
    }
    Ok(NsRegularity {
        regular: true,
        failing_probe: None,
    })
}

/// One grid node of an impossibility scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NsScanNode {
    pub tau: f64,
    pub x: [f64; 4],
    pub residual: f64,
}

/// Outcome of scanning a model against the Nelson–Siegel family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NsScanReport {
    pub max_residual: f64,
    pub tolerance: f64,
    /// `a ≡ 0` on the grid and no jump ever moves the state.
    pub is_trivial_model: bool,
    pub verdict: &'static str,
    /// False would be a counterexample: a consistent scan of a
    /// non-deterministic model.
    pub matches_expectation: bool,
    #[serde(skip)]
    pub nodes: Vec<NsScanNode>,
}

impl NsScanReport {
    /// CSV with columns `tau, x1..x4, residual`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let header: Vec<String> = ["tau", "x1", "x2", "x3", "x4", "residual"].map(String::from).to_vec();
        let rows = self.nodes.iter().map(|n| {
            let mut row = vec![n.tau];
            row.extend(n.x);
            row.push(n.residual);
            row
        });
        write_csv(out, &header, rows)
    }
}

/// Evaluates [`ns_consistency_residual`] on the grid and classifies the
/// model. Nodes are evaluated in parallel and reported in grid order.
pub fn ns_impossibility_scan(
    model: &JumpDiffusionModel,
    xs: &[NsState],
    taus: &[f64],
    tol: f64,
) -> Result<NsScanReport> {
    check_model(model)?;
    if xs.is_empty() || taus.is_empty() {
        return Err(Error::invalid("scan grids must be non-empty"));
    }
    let grid: Vec<(NsState, f64)> = xs.iter().flat_map(|x| taus.iter().map(move |&t| (*x, t))).collect();
    let nodes = grid
        .par_iter()
        .map(|(x, tau)| {
            ns_consistency_residual(model, x, *tau, 1e-12).map(|residual| NsScanNode {
                tau: *tau,
                x: x.to_array(),
                residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_residual = nodes.iter().fold(0.0f64, |m, n| m.max(n.residual.abs()));
    let still_jumps = model.jumps().is_dirac_zero();
    let is_trivial_model = xs.iter().all(|x| {
        let xs = x.to_array();
        model.covariance_at(&xs).iter().all(|v| *v == 0.0) && (still_jumps || model.intensity_at(&xs) == 0.0)
    });
    let consistent = max_residual < tol;
    Ok(NsScanReport {
        max_residual,
        tolerance: tol,
        is_trivial_model,
        verdict: if consistent { "consistent" } else { "inconsistent" },
        matches_expectation: !consistent || is_trivial_model,
        nodes,
    })
}
