//! The general consistency condition for a state model and a curve family,
//! and recovery of the model coefficients from the curve.
//!
//! At maturity `τ` and state `x` the residual is
//!
//! ```text
//! -∂τG + Σ ∂ᵢG bᵢ + Σ aᵢⱼ ∂ᵢⱼG - 2 Σ aᵢⱼ ∂ᵢG I∇ⱼ + λ(x) ∫ δ₀(x, τ, ξ) Q(dξ)
//! ```
//!
//! with `δ₀ = [G(τ, x+ξ) - G(τ, x)] exp(-(IG(τ, x+ξ) - IG(τ, x)))`. The
//! model is consistent with the family exactly when it vanishes everywhere.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::ForwardCurve;
use crate::error::{Error, Result};
use crate::model::{JumpDiffusionModel, JumpMeasure};
use crate::output::write_csv;

/// Maturities of the default residual grid.
pub const DEFAULT_TAU_GRID: [f64; 8] = [0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 30.0];
/// Number of quasi-random states in the default residual grid.
pub const DEFAULT_X_POINTS: usize = 16;
/// Default threshold on the max-abs residual for a "consistent" verdict.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Condition number above which recovery is flagged rank-deficient.
pub const RANK_DEFICIENT_CONDITION: f64 = 1e10;

fn check_point(family: &dyn ForwardCurve, x: &[f64], tau: f64) -> Result<()> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("maturity must be finite and >= 0, got {tau}")));
    }
    if tau > family.max_maturity() {
        return Err(Error::Range {
            tau,
            max: family.max_maturity(),
        });
    }
    if !family.contains(x) {
        return Err(Error::OutOfDomain {
            what: "curve family".into(),
            point: x.to_vec(),
        });
    }
    Ok(())
}

fn shifted(x: &[f64], xi: &[f64]) -> Vec<f64> {
    x.iter().zip(xi).map(|(a, b)| a + b).collect()
}

/// `[G(τ, x+ξ) - G(τ, x)] · exp(-(IG(τ, x+ξ) - IG(τ, x)))`.
pub fn delta0(family: &dyn ForwardCurve, x: &[f64], tau: f64, xi: &[f64]) -> Result<f64> {
    check_point(family, x, tau)?;
    if xi.len() != x.len() {
        return Err(Error::invalid("jump and state dimensions differ"));
    }
    let y = shifted(x, xi);
    if !family.contains(&y) {
        return Err(Error::OutOfDomain {
            what: "curve family (post-jump state)".into(),
            point: y,
        });
    }
    let base = (family.value(tau, x), family.integral(tau, x));
    Ok(delta0_from(family, base, &y, tau))
}

fn delta0_from(family: &dyn ForwardCurve, (g, ig): (f64, f64), y: &[f64], tau: f64) -> f64 {
    let dg = family.value(tau, y) - g;
    if dg == 0.0 {
        return 0.0;
    }
    dg * (-(family.integral(tau, y) - ig)).exp()
}

/// `∫ δ₀(x, τ, ξ) Q(dξ)`.
///
/// Post-jump states are evaluated wherever the family's formulas are
/// defined; a divergent or non-convergent integral is reported as a
/// violation of the jump regularity condition.
pub fn jump_integral(family: &dyn ForwardCurve, jumps: &JumpMeasure, x: &[f64], tau: f64, tol: f64) -> Result<f64> {
    check_point(family, x, tau)?;
    if jumps.dim() != x.len() {
        return Err(Error::invalid("jump measure and state dimensions differ"));
    }
    if jumps.is_dirac_zero() {
        return Ok(0.0);
    }
    let base = (family.value(tau, x), family.integral(tau, x));
    jumps
        .expect(&|xi| delta0_from(family, base, &shifted(x, xi), tau), tol)
        .map_err(|e| e.into_regularity(tau))
}

/// The five additive parts of the residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualTerms {
    /// `Σ ∂ᵢG bᵢ`
    pub drift: f64,
    /// `Σ aᵢⱼ ∂ᵢⱼG`
    pub diffusion: f64,
    /// `-2 Σ aᵢⱼ ∂ᵢG I∇ⱼ`
    pub cross: f64,
    /// `λ ∫ δ₀ dQ`
    pub jump: f64,
    /// `-∂τG`
    pub dtau: f64,
}

impl ResidualTerms {
    pub fn total(&self) -> f64 {
        self.dtau + self.drift + self.diffusion + self.cross + self.jump
    }
}

/// Residual of the consistency condition at one `(τ, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub value: f64,
    pub terms: ResidualTerms,
}

/// Evaluates the consistency residual (left minus right side) at `(τ, x)`.
pub fn consistency_residual(
    model: &JumpDiffusionModel,
    family: &dyn ForwardCurve,
    x: &[f64],
    tau: f64,
    tol: f64,
) -> Result<Residual> {
    if model.dim() != family.dim() {
        return Err(Error::invalid(format!(
            "model has dimension {}, curve family {}",
            model.dim(),
            family.dim()
        )));
    }
    if !model.domain().contains(x) {
        return Err(Error::OutOfDomain {
            what: "model".into(),
            point: x.to_vec(),
        });
    }
    check_point(family, x, tau)?;
    let grad = family.gradient(tau, x);
    let b = model.drift_at(x);
    let a = model.covariance_at(x);
    let lambda = model.intensity_at(x);
    let jump = if lambda == 0.0 {
        0.0
    } else {
        lambda * jump_integral(family, model.jumps(), x, tau, tol)?
    };
    let (diffusion, cross) = if a.iter().all(|v| *v == 0.0) {
        (0.0, 0.0)
    } else {
        (
            a.component_mul(&family.hessian(tau, x)).sum(),
            -2.0 * grad.dot(&(&a * family.gradient_integral(tau, x))),
        )
    };
    let terms = ResidualTerms {
        drift: grad.dot(&b),
        diffusion,
        cross,
        jump,
        dtau: -family.dtau(tau, x),
    };
    Ok(Residual {
        value: terms.total(),
        terms,
    })
}

/// One evaluated grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNode {
    pub tau: f64,
    pub x: Vec<f64>,
    pub residual: Residual,
}

/// A grid node whose evaluation failed.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFailure {
    pub tau: f64,
    pub x: Vec<f64>,
    pub error: Error,
}

/// Residuals over a `(τ, x)` grid with aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub dim: usize,
    pub nodes: Vec<ResidualNode>,
    pub failures: Vec<NodeFailure>,
    pub max_abs: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, Serialize)]
struct FailureSummary {
    tau: f64,
    x: Vec<f64>,
    error: String,
}

/// Machine-readable verdict of a [`ResidualReport`].
#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub verdict: &'static str,
    pub tolerance: f64,
    pub points: usize,
    pub max_abs: f64,
    pub rms: f64,
    failures: Vec<FailureSummary>,
}

impl ResidualReport {
    /// Consistent at `tol`: every node evaluated and max-abs below `tol`.
    pub fn is_consistent(&self, tol: f64) -> bool {
        self.failures.is_empty() && !self.nodes.is_empty() && self.max_abs < tol
    }

    pub fn first_failure(&self) -> Option<&NodeFailure> {
        self.failures.first()
    }

    pub fn summary(&self, tol: f64) -> ReportSummary {
        let verdict = if !self.failures.is_empty() {
            "failed"
        } else if self.is_consistent(tol) {
            "consistent"
        } else {
            "inconsistent"
        };
        ReportSummary {
            verdict,
            tolerance: tol,
            points: self.nodes.len(),
            max_abs: self.max_abs,
            rms: self.rms,
            failures: self
                .failures
                .iter()
                .map(|f| FailureSummary {
                    tau: f.tau,
                    x: f.x.clone(),
                    error: f.error.to_string(),
                })
                .collect(),
        }
    }

    /// CSV with columns `tau, x1.., residual, term_drift, term_diff,
    /// term_cross, term_jump, term_dtau`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut header = vec!["tau".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        header.extend(
            ["residual", "term_drift", "term_diff", "term_cross", "term_jump", "term_dtau"].map(String::from),
        );
        let rows = self.nodes.iter().map(|n| {
            let t = &n.residual.terms;
            let mut row = vec![n.tau];
            row.extend(&n.x);
            row.extend([n.residual.value, t.drift, t.diffusion, t.cross, t.jump, t.dtau]);
            row
        });
        write_csv(out, &header, rows)
    }
}

/// Evaluates the residual at every `(τ, x)` of the grid. Nodes are
/// evaluated in parallel; the report is independent of scheduling.
pub fn residual_report(
    model: &JumpDiffusionModel,
    family: &dyn ForwardCurve,
    taus: &[f64],
    xs: &[Vec<f64>],
    tol: f64,
) -> Result<ResidualReport> {
    if taus.is_empty() || xs.is_empty() {
        return Err(Error::invalid("residual grid must be non-empty"));
    }
    let grid: Vec<(f64, &Vec<f64>)> = xs.iter().flat_map(|x| taus.iter().map(move |&t| (t, x))).collect();
    let outcomes: Vec<_> = grid
        .par_iter()
        .map(|&(tau, x)| (tau, x, consistency_residual(model, family, x, tau, tol)))
        .collect();
    let mut nodes = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (tau, x, outcome) in outcomes {
        match outcome {
            Ok(residual) => nodes.push(ResidualNode {
                tau,
                x: x.clone(),
                residual,
            }),
            Err(error) => failures.push(NodeFailure {
                tau,
                x: x.clone(),
                error,
            }),
        }
    }
    let max_abs = nodes.iter().map(|n| n.residual.value.abs()).fold(0.0, f64::max);
    let rms = if nodes.is_empty() {
        0.0
    } else {
        (nodes.iter().map(|n| n.residual.value.powi(2)).sum::<f64>() / nodes.len() as f64).sqrt()
    };
    Ok(ResidualReport {
        dim: family.dim(),
        nodes,
        failures,
        max_abs,
        rms,
    })
}

/// Coefficients read off a curve family at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredCoefficients {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
    pub residual_norm: f64,
    /// Condition number of the column-equilibrated design matrix; infinite
    /// when a column vanishes.
    pub condition_number: f64,
    pub rank_deficient: bool,
}

impl RecoveredCoefficients {
    pub fn lambda_negative(&self) -> bool {
        self.lambda < 0.0
    }
}

/// Recovers `(a, b, λ)` at `x` by least squares over the maturities in
/// `taus`, regressing `∂τG` on `∂ᵢG`, `∂ᵢⱼG - 2∂ᵢG I∇ⱼ` (symmetrized) and
/// `∫ δ₀ dQ`. Returns the minimum-norm solution when the design is
/// rank-deficient.
pub fn recover_coefficients(
    family: &dyn ForwardCurve,
    jumps: &JumpMeasure,
    x: &[f64],
    taus: &[f64],
    tol: f64,
) -> Result<RecoveredCoefficients> {
    let n = family.dim();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let unknowns = n + pairs.len() + 1;
    if taus.len() < unknowns {
        return Err(Error::invalid(format!(
            "recovery needs at least {unknowns} maturities, got {}",
            taus.len()
        )));
    }
    let mut design = DMatrix::zeros(taus.len(), unknowns);
    let mut target = DVector::zeros(taus.len());
    for (r, &tau) in taus.iter().enumerate() {
        check_point(family, x, tau)?;
        let grad = family.gradient(tau, x);
        let hess = family.hessian(tau, x);
        let igrad = family.gradient_integral(tau, x);
        target[r] = family.dtau(tau, x);
        for i in 0..n {
            design[(r, i)] = grad[i];
        }
        for (k, &(i, j)) in pairs.iter().enumerate() {
            design[(r, n + k)] = if i == j {
                hess[(i, i)] - 2.0 * grad[i] * igrad[i]
            } else {
                2.0 * hess[(i, j)] - 2.0 * (grad[i] * igrad[j] + grad[j] * igrad[i])
            };
        }
        design[(r, unknowns - 1)] = jump_integral(family, jumps, x, tau, tol)?;
    }

    let norms: Vec<f64> = design.column_iter().map(|c| c.norm()).collect();
    let scale_floor = norms.iter().cloned().fold(0.0, f64::max) * f64::EPSILON;
    let mut scaled = design.clone();
    let mut active = Vec::new();
    for (j, &nrm) in norms.iter().enumerate() {
        if nrm > scale_floor && nrm > 0.0 {
            scaled.column_mut(j).scale_mut(1.0 / nrm);
            active.push(j);
        } else {
            scaled.column_mut(j).fill(0.0);
        }
    }
    let svd = scaled.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition_number = if active.len() < unknowns || smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    };
    let rank_deficient = !(condition_number <= RANK_DEFICIENT_CONDITION);
    let cutoff = smax * 1e-12;
    let scaled_solution = svd
        .solve(&target, cutoff)
        .map_err(|e| Error::invalid(format!("least-squares solve failed: {e}")))?;
    let solution = DVector::from_fn(unknowns, |j, _| {
        if active.contains(&j) {
            scaled_solution[j] / norms[j]
        } else {
            0.0
        }
    });
    let residual_norm = (&design * &solution - &target).norm();

    let b = solution.rows(0, n).into_owned();
    let mut a = DMatrix::zeros(n, n);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        a[(i, j)] = solution[n + k];
        a[(j, i)] = solution[n + k];
    }
    Ok(RecoveredCoefficients {
        a,
        b,
        lambda: solution[unknowns - 1],
        residual_norm,
        condition_number,
        rank_deficient,
    })
}

/// Outcome of a regularity scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub regular: bool,
    /// Largest `∫ |δ₀| dQ` found over the converged maturities.
    pub bound: f64,
    /// First maturity at which the integral failed.
    pub failing_tau: Option<f64>,
}

/// Number of maturities in the regularity scan.
const REGULARITY_GRID: usize = 16;

/// Checks that `∫ |δ₀(x, τ, ξ)| Q(dξ)` is finite at `τ = 0` and on a
/// log-spaced grid of maturities up to `tau_max`.
pub fn regularity_check(
    family: &dyn ForwardCurve,
    jumps: &JumpMeasure,
    x: &[f64],
    tau_max: f64,
    tol: f64,
) -> Result<RegularityReport> {
    if !(tau_max > 0.0 && tau_max.is_finite()) {
        return Err(Error::invalid(format!("tau_max must be positive, got {tau_max}")));
    }
    check_point(family, x, 0.0)?;
    let mut taus = vec![0.0];
    let lo = (tau_max * 1e-3).ln();
    let hi = tau_max.ln();
    taus.extend((0..REGULARITY_GRID).map(|k| (lo + (hi - lo) * k as f64 / (REGULARITY_GRID - 1) as f64).exp()));
    let mut bound: f64 = 0.0;
    if jumps.is_dirac_zero() {
        return Ok(RegularityReport {
            regular: true,
            bound,
            failing_tau: None,
        });
    }
    for tau in taus {
        let base = (family.value(tau, x), family.integral(tau, x));
        match jumps.expect(&|xi| delta0_from(family, base, &shifted(x, xi), tau).abs(), tol) {
            Ok(v) => bound = bound.max(v),
            Err(_) => {
                return Ok(RegularityReport {
                    regular: false,
                    bound,
                    failing_tau: Some(tau),
                })
            }
        }
    }
    Ok(RegularityReport {
        regular: true,
        bound,
        failing_tau: None,
    })
}
