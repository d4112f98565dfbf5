use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use super::basis::StateBasis;
use super::solver::HPath;
use crate::error::{Error, Result};
use crate::model::JumpDiffusionModel;
use crate::output::write_csv;

fn check_state(path: &HPath, x: &[f64]) -> Result<()> {
    if x.len() != path.dim() {
        return Err(Error::invalid(format!(
            "state has dimension {}, path expects {}",
            x.len(),
            path.dim()
        )));
    }
    Ok(())
}

fn phi(path: &HPath, x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(path.basis().len(), path.basis().iter().map(|b| b.value(x)))
}

/// Zero-coupon bond price `exp(-Σ H_k(τ) φ_k(x))`.
pub fn bond_price(path: &HPath, x: &[f64], tau: f64) -> Result<f64> {
    check_state(path, x)?;
    let l = path.eval(tau)?;
    Ok((-l.big.dot(&phi(path, x))).exp())
}

/// A point of a yield curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YieldPoint {
    pub tau: f64,
    pub price: f64,
    /// `-ln P / τ`; at `τ = 0` the short rate.
    pub yield_: f64,
}

/// Bond prices and yields at the given maturities.
pub fn yield_curve(path: &HPath, x: &[f64], taus: &[f64]) -> Result<Vec<YieldPoint>> {
    check_state(path, x)?;
    let p = phi(path, x);
    taus.iter()
        .map(|&tau| {
            let l = path.eval(tau)?;
            let exponent = l.big.dot(&p);
            let yield_ = if tau == 0.0 { l.value.dot(&p) } else { exponent / tau };
            Ok(YieldPoint {
                tau,
                price: (-exponent).exp(),
                yield_,
            })
        })
        .collect()
}

/// CSV with columns `tau, price, yield`.
pub fn write_yield_csv<W: Write>(out: W, points: &[YieldPoint]) -> Result<()> {
    let header = ["tau", "price", "yield"].map(String::from);
    write_csv(out, &header, points.iter().map(|p| vec![p.tau, p.price, p.yield_]))
}

/// Integrated affine condition with `H` and `h` from `path`, left minus
/// right side:
///
/// ```text
/// h₀(τ) - h₀(0) + Σ (hᵢ(τ) - hᵢ(0)) xᵢ - [Σ Hᵢ bᵢ(x) - Σ aᵢⱼ(x) Hᵢ Hⱼ + λ(x)(1 - L(H))]
/// ```
///
/// with `L` the Laplace transform of the jump distribution.
pub fn affine_consistency_residual(model: &JumpDiffusionModel, path: &HPath, x: &[f64], tau: f64) -> Result<f64> {
    let n = model.dim();
    if !StateBasis::is_affine(path.basis(), n) {
        return Err(Error::invalid("path does not carry the affine basis"));
    }
    check_state(path, x)?;
    let now = path.eval(tau)?;
    let start = path.eval(0.0)?;
    let dh = &now.value - &start.value;
    let lhs = dh[0] + (0..n).map(|i| dh[i + 1] * x[i]).sum::<f64>();
    let big = now.big.rows(1, n).into_owned();
    let b = model.drift_at(x);
    let a = model.covariance_at(x);
    let mut rhs = big.dot(&b) - (big.transpose() * &a * &big)[0];
    let intensity = model.intensity_at(x);
    if intensity != 0.0 && !model.jumps().is_dirac_zero() {
        rhs += intensity * (1.0 - model.jumps().laplace(big.as_slice())?);
    }
    Ok(lhs - rhs)
}
