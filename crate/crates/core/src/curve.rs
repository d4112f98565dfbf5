//! Forward-curve families `G(τ, x)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::quadrature::adaptive_simpson;

/// A forward-curve family `r(t, T) = G(T - t, X_t)` together with the
/// derivatives and maturity integrals the consistency conditions need.
///
/// `integral` is `∫₀^τ G(u, x) du` and `gradient_integral` is
/// `∫₀^τ ∇ₓG(u, x) du`; both vanish at `τ = 0`.
pub trait ForwardCurve: Send + Sync {
    fn dim(&self) -> usize;

    /// Whether `x` lies in the state space on which the family is defined.
    fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
    }

    /// Largest maturity at which the family can be evaluated.
    fn max_maturity(&self) -> f64 {
        f64::INFINITY
    }

    fn value(&self, tau: f64, x: &[f64]) -> f64;
    fn dtau(&self, tau: f64, x: &[f64]) -> f64;
    fn gradient(&self, tau: f64, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, tau: f64, x: &[f64]) -> DMatrix<f64>;
    fn integral(&self, tau: f64, x: &[f64]) -> f64;
    fn gradient_integral(&self, tau: f64, x: &[f64]) -> DVector<f64>;

    /// Zero-coupon bond price `exp(-∫₀^τ G(u, x) du)`.
    fn bond_price(&self, tau: f64, x: &[f64]) -> f64 {
        (-self.integral(tau, x)).exp()
    }
}

impl<T: ForwardCurve + ?Sized> ForwardCurve for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn contains(&self, x: &[f64]) -> bool {
        (**self).contains(x)
    }
    fn max_maturity(&self) -> f64 {
        (**self).max_maturity()
    }
    fn value(&self, tau: f64, x: &[f64]) -> f64 {
        (**self).value(tau, x)
    }
    fn dtau(&self, tau: f64, x: &[f64]) -> f64 {
        (**self).dtau(tau, x)
    }
    fn gradient(&self, tau: f64, x: &[f64]) -> DVector<f64> {
        (**self).gradient(tau, x)
    }
    fn hessian(&self, tau: f64, x: &[f64]) -> DMatrix<f64> {
        (**self).hessian(tau, x)
    }
    fn integral(&self, tau: f64, x: &[f64]) -> f64 {
        (**self).integral(tau, x)
    }
    fn gradient_integral(&self, tau: f64, x: &[f64]) -> DVector<f64> {
        (**self).gradient_integral(tau, x)
    }
}

type CurveFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type DomainFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A family known only through `G`; derivatives come from central
/// differences and maturity integrals from adaptive Simpson quadrature.
///
/// First derivatives use the step `1e-5 · max(1, |x|)`. Second derivatives
/// use a step ten times larger, which keeps the rounding noise of the
/// second difference near `1e-7` instead of `1e-6`.
#[derive(Clone)]
pub struct NumericCurve {
    dim: usize,
    g: CurveFn,
    domain: Option<DomainFn>,
    max_maturity: f64,
}

const FD_STEP: f64 = 1e-5;
const FD_STEP_SECOND: f64 = 1e-4;
const SIMPSON_TOL: f64 = 1e-12;

impl NumericCurve {
    pub fn new<F>(dim: usize, g: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        NumericCurve {
            dim,
            g: Arc::new(g),
            domain: None,
            max_maturity: f64::INFINITY,
        }
    }

    pub fn with_domain<D>(mut self, domain: D) -> Self
    where
        D: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Arc::new(domain));
        self
    }

    /// Forgets everything about `curve` except its values.
    pub fn from_curve(curve: Arc<dyn ForwardCurve>) -> Self {
        let dim = curve.dim();
        let domain_curve = curve.clone();
        let max_maturity = curve.max_maturity();
        let mut numeric =
            NumericCurve::new(dim, move |tau, x| curve.value(tau, x)).with_domain(move |x| domain_curve.contains(x));
        numeric.max_maturity = max_maturity;
        numeric
    }

    fn step(x: f64, base: f64) -> f64 {
        base * x.abs().max(1.0)
    }

    fn shifted(x: &[f64], i: usize, h: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        y[i] += h;
        y
    }
}

impl ForwardCurve for NumericCurve {
    fn dim(&self) -> usize {
        self.dim
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && self.domain.as_ref().is_none_or(|d| d(x))
    }

    fn max_maturity(&self) -> f64 {
        self.max_maturity
    }

    fn value(&self, tau: f64, x: &[f64]) -> f64 {
        (self.g)(tau, x)
    }

    fn dtau(&self, tau: f64, x: &[f64]) -> f64 {
        let h = Self::step(tau, FD_STEP);
        let g = |t: f64| (self.g)(t, x);
        if tau < h {
            // one-sided second-order differences at the ends of the range
            (-3.0 * g(tau) + 4.0 * g(tau + h) - g(tau + 2.0 * h)) / (2.0 * h)
        } else if tau + h > self.max_maturity {
            (3.0 * g(tau) - 4.0 * g(tau - h) + g(tau - 2.0 * h)) / (2.0 * h)
        } else {
            (g(tau + h) - g(tau - h)) / (2.0 * h)
        }
    }

    fn gradient(&self, tau: f64, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| {
            let h = Self::step(x[i], FD_STEP);
            ((self.g)(tau, &Self::shifted(x, i, h)) - (self.g)(tau, &Self::shifted(x, i, -h))) / (2.0 * h)
        })
    }

    fn hessian(&self, tau: f64, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let g0 = (self.g)(tau, x);
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let hi = Self::step(x[i], FD_STEP_SECOND);
            let plus = (self.g)(tau, &Self::shifted(x, i, hi));
            let minus = (self.g)(tau, &Self::shifted(x, i, -hi));
            hess[(i, i)] = (plus - 2.0 * g0 + minus) / (hi * hi);
            for j in 0..i {
                let hj = Self::step(x[j], FD_STEP_SECOND);
                let eval = |si: f64, sj: f64| {
                    let mut y = x.to_vec();
                    y[i] += si * hi;
                    y[j] += sj * hj;
                    (self.g)(tau, &y)
                };
                let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * hi * hj);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        hess
    }

    fn integral(&self, tau: f64, x: &[f64]) -> f64 {
        if tau == 0.0 {
            return 0.0;
        }
        adaptive_simpson(&|u| (self.g)(u, x), 0.0, tau, SIMPSON_TOL)
    }

    fn gradient_integral(&self, tau: f64, x: &[f64]) -> DVector<f64> {
        if tau == 0.0 {
            return DVector::zeros(self.dim);
        }
        DVector::from_fn(self.dim, |i, _| {
            let h = Self::step(x[i], FD_STEP);
            (self.integral(tau, &Self::shifted(x, i, h)) - self.integral(tau, &Self::shifted(x, i, -h))) / (2.0 * h)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> NumericCurve {
        // G = x0 + x1 * exp(-τ) + x0 * x1 * τ
        NumericCurve::new(2, |tau, x| x[0] + x[1] * (-tau).exp() + x[0] * x[1] * tau)
    }

    #[test]
    fn derivatives_match_closed_form() {
        let c = curve();
        let (tau, x) = (1.3, [0.4, -0.7]);
        assert!((c.dtau(tau, &x) - (-x[1] * (-tau as f64).exp() + x[0] * x[1])).abs() < 1e-8);
        let g = c.gradient(tau, &x);
        assert!((g[0] - (1.0 + x[1] * tau)).abs() < 1e-8);
        assert!((g[1] - ((-tau as f64).exp() + x[0] * tau)).abs() < 1e-8);
        let h = c.hessian(tau, &x);
        assert!(h[(0, 0)].abs() < 1e-6);
        assert!((h[(0, 1)] - tau).abs() < 1e-6);
        assert_eq!(h[(0, 1)], h[(1, 0)]);
        assert!((c.dtau(0.0, &x) - (-x[1] + x[0] * x[1])).abs() < 1e-8);
    }

    #[test]
    fn integrals() {
        let c = curve();
        let (tau, x) = (2.0, [0.4, -0.7]);
        let exact = x[0] * tau + x[1] * (1.0 - (-tau as f64).exp()) + x[0] * x[1] * tau * tau / 2.0;
        assert!((c.integral(tau, &x) - exact).abs() < 1e-11);
        assert_eq!(c.integral(0.0, &x), 0.0);
        assert_eq!(c.gradient_integral(0.0, &x), DVector::zeros(2));
        let gi = c.gradient_integral(tau, &x);
        assert!((gi[0] - (tau + x[1] * tau * tau / 2.0)).abs() < 1e-7);
    }
}
