//! One-dimensional adaptive quadrature.
//!
//! Finite intervals use a 15-point Gauss–Legendre rule with recursive
//! bisection; the error estimate is the difference between the rule on the
//! whole interval and on its two halves. Half-lines are swept in geometrically
//! growing segments until the contributions die out; a tail that never decays
//! is reported as a divergent integral.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const RULE_POINTS: usize = 15;
const MAX_DEPTH: u32 = 40;
/// Half-line sweeps stop at `scale * 2^MAX_SEGMENT_POW`.
const MAX_SEGMENT_POW: i32 = 12;

/// An integral estimate with its absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre_rule(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_rule(RULE_POINTS))
}

fn non_finite(at: f64) -> Error {
    Error::Divergent {
        coordinate: None,
        detail: format!("integrand is not finite at {at}"),
    }
}

fn fixed_rule<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> Result<f64> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    for &(node, weight) in rule() {
        let x = mid + half * node;
        let y = f(x);
        if !y.is_finite() {
            return Err(non_finite(x));
        }
        sum += weight * y;
    }
    let value = half * sum;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(non_finite(mid))
    }
}

struct Accumulator {
    value: f64,
    error: f64,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn bisect<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    roundoff: f64,
    depth: u32,
    acc: &mut Accumulator,
) -> Result<()> {
    let mid = 0.5 * (a + b);
    let left = fixed_rule(f, a, mid)?;
    let right = fixed_rule(f, mid, b)?;
    let refined = left + right;
    let err = (refined - whole).abs();
    let floor = roundoff.max(4.0 * f64::EPSILON * refined.abs());
    if err <= tol.max(floor) {
        acc.value += refined;
        acc.error += err;
        return Ok(());
    }
    if depth >= MAX_DEPTH || mid <= a || mid >= b {
        acc.value += refined;
        acc.error += err;
        acc.converged = false;
        return Ok(());
    }
    bisect(f, a, mid, left, 0.5 * tol, roundoff, depth + 1, acc)?;
    bisect(f, mid, b, right, 0.5 * tol, roundoff, depth + 1, acc)
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64, tol: f64) -> Result<Integral> {
    if a == b {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
        });
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid("finite interval expected"));
    }
    if b < a {
        let r = integrate(f, b, a, tol)?;
        return Ok(Integral {
            value: -r.value,
            error: r.error,
        });
    }
    let whole = fixed_rule(f, a, b)?;
    let mut acc = Accumulator {
        value: 0.0,
        error: 0.0,
        converged: true,
    };
    // pieces need not resolve below the rounding level of the whole integral
    let roundoff = 16.0 * f64::EPSILON * whole.abs();
    bisect(f, a, b, whole, tol, roundoff, 0, &mut acc)?;
    if acc.converged {
        Ok(Integral {
            value: acc.value,
            error: acc.error,
        })
    } else {
        Err(Error::Accuracy {
            estimate: acc.value,
            error_bound: acc.error,
        })
    }
}

/// Integrates `f` over the half-line starting at `origin` and running in the
/// direction of `direction` (its sign), with characteristic length `scale`.
/// The result is the integral over the set, regardless of direction.
pub fn integrate_half_line<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    origin: f64,
    scale: f64,
    direction: f64,
    tol: f64,
) -> Result<Integral> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("half-line scale must be positive, got {scale}")));
    }
    let dir = direction.signum();
    let seg_tol = tol / 64.0;
    let mut total = Integral {
        value: 0.0,
        error: 0.0,
    };
    let mut quiet = 0;
    let mut lo = 0.0;
    for pow in 0..=MAX_SEGMENT_POW {
        let hi = f64::powi(2.0, pow);
        let (a, b) = (origin + dir * scale * lo, origin + dir * scale * hi);
        let seg = integrate(f, a.min(b), a.max(b), seg_tol)?;
        total.value += seg.value;
        total.error += seg.error;
        if hi >= 8.0 && seg.value.abs() <= seg_tol {
            quiet += 1;
            if quiet >= 2 {
                return Ok(total);
            }
        } else {
            quiet = 0;
        }
        lo = hi;
    }
    Err(Error::Divergent {
        coordinate: None,
        detail: format!(
            "tail contributions do not decay (partial value {} after {} scale units)",
            total.value,
            f64::powi(2.0, MAX_SEGMENT_POW)
        ),
    })
}

/// Adaptive Simpson's rule; returns the best estimate even when the depth
/// limit stops refinement early.
pub fn adaptive_simpson<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64 + ?Sized>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 30)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let r = gauss_legendre_rule(15);
        let w: f64 = r.iter().map(|p| p.1).sum();
        assert!((w - 2.0).abs() < 1e-14);
        // degree 28 is within 2n - 1
        let i: f64 = r.iter().map(|&(x, w)| w * x.powi(28)).sum();
        assert!((i - 2.0 / 29.0).abs() < 1e-14);
    }

    #[test]
    fn finite_interval() {
        let r = integrate(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        let r = integrate(&|x: f64| x.sqrt(), 0.0, 1.0, 1e-10).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-10);
        let r = integrate(&|x: f64| x, 1.0, 0.0, 1e-12).unwrap();
        assert!((r.value + 0.5).abs() < 1e-14);
    }

    #[test]
    fn half_line_exponential() {
        let r = integrate_half_line(&|x: f64| 2.0 * (-3.0 * x).exp(), 0.0, 1.0 / 3.0, 1.0, 1e-12).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-12);
        let r = integrate_half_line(&|x: f64| x * x * (-x).exp(), 0.0, 1.0, 1.0, 1e-11).unwrap();
        assert!((r.value - 2.0).abs() < 1e-11);
        let r = integrate_half_line(&|x: f64| x.exp(), 0.0, 1.0, -1.0, 1e-12).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn half_line_divergence_is_detected() {
        let err = integrate_half_line(&|x: f64| (-0.5 * x).exp() * (0.5 * x).exp(), 0.0, 1.0, 1.0, 1e-10);
        assert!(matches!(err, Err(Error::Divergent { .. })));
        let err = integrate_half_line(&|x: f64| (0.1 * x).exp(), 0.0, 1.0, 1.0, 1e-10);
        assert!(matches!(err, Err(Error::Divergent { .. })));
    }

    #[test]
    fn non_finite_integrand() {
        let err = integrate(&|_x: f64| f64::NAN, 0.0, 1.0, 1e-8);
        assert!(matches!(err, Err(Error::Divergent { .. })));
    }

    #[test]
    fn simpson() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-12);
    }
}
