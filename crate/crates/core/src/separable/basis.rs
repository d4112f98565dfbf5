use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A state function `φ_k(x)` of a separable family.
#[derive(Clone)]
pub enum StateBasis {
    Constant,
    /// `x_i`
    Linear(usize),
    /// `x_i x_j`
    Quadratic(usize, usize),
    Callable {
        value: ScalarFn,
        gradient: VectorFn,
        hessian: MatrixFn,
    },
}

impl fmt::Debug for StateBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateBasis::Constant => write!(f, "Constant"),
            StateBasis::Linear(i) => write!(f, "Linear({i})"),
            StateBasis::Quadratic(i, j) => write!(f, "Quadratic({i}, {j})"),
            StateBasis::Callable { .. } => write!(f, "Callable"),
        }
    }
}

impl StateBasis {
    pub fn callable<V, G, H>(value: V, gradient: G, hessian: H) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        StateBasis::Callable {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }

    /// The affine basis `(1, x_1, …, x_n)`.
    pub fn affine(n: usize) -> Vec<StateBasis> {
        std::iter::once(StateBasis::Constant).chain((0..n).map(StateBasis::Linear)).collect()
    }

    /// Whether `basis` is exactly the affine basis of dimension `n`.
    pub fn is_affine(basis: &[StateBasis], n: usize) -> bool {
        basis.len() == n + 1
            && matches!(basis[0], StateBasis::Constant)
            && basis[1..].iter().enumerate().all(|(i, b)| matches!(b, StateBasis::Linear(j) if *j == i))
    }

    /// Largest state index referenced, if any.
    pub fn max_index(&self) -> Option<usize> {
        match *self {
            StateBasis::Linear(i) => Some(i),
            StateBasis::Quadratic(i, j) => Some(i.max(j)),
            _ => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            StateBasis::Constant => 1.0,
            StateBasis::Linear(i) => x[*i],
            StateBasis::Quadratic(i, j) => x[*i] * x[*j],
            StateBasis::Callable { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        match self {
            StateBasis::Constant => {}
            StateBasis::Linear(i) => g[*i] = 1.0,
            StateBasis::Quadratic(i, j) => {
                g[*i] += x[*j];
                g[*j] += x[*i];
            }
            StateBasis::Callable { gradient, .. } => g = gradient(x),
        }
        g
    }

    /// `∂φ/∂x_i`
    pub fn partial(&self, x: &[f64], i: usize) -> f64 {
        match self {
            StateBasis::Constant => 0.0,
            StateBasis::Linear(k) => f64::from(u8::from(*k == i)),
            StateBasis::Quadratic(k, l) => {
                let mut d = 0.0;
                if *k == i {
                    d += x[*l];
                }
                if *l == i {
                    d += x[*k];
                }
                d
            }
            StateBasis::Callable { gradient, .. } => gradient(x)[i],
        }
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        match self {
            StateBasis::Constant | StateBasis::Linear(_) => {}
            StateBasis::Quadratic(i, j) => {
                h[(*i, *j)] += 1.0;
                h[(*j, *i)] += 1.0;
            }
            StateBasis::Callable { hessian, .. } => h = hessian(x),
        }
        h
    }

    /// `φ(y) - φ(x)`
    pub fn increment(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            StateBasis::Constant => 0.0,
            StateBasis::Linear(i) => y[*i] - x[*i],
            _ => self.value(y) - self.value(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivatives() {
        let q = StateBasis::Quadratic(0, 0);
        let x = [3.0, 1.0];
        assert_eq!(q.value(&x), 9.0);
        assert_eq!(q.gradient(&x)[0], 6.0);
        assert_eq!(q.partial(&x, 0), 6.0);
        assert_eq!(q.hessian(&x)[(0, 0)], 2.0);
        let cross = StateBasis::Quadratic(0, 1);
        assert_eq!(cross.gradient(&x), DVector::from_vec(vec![1.0, 3.0]));
        assert_eq!(cross.hessian(&x)[(1, 0)], 1.0);
    }

    #[test]
    fn affine_basis_detection() {
        assert!(StateBasis::is_affine(&StateBasis::affine(3), 3));
        assert!(!StateBasis::is_affine(&StateBasis::affine(3), 2));
        assert!(!StateBasis::is_affine(&[StateBasis::Constant, StateBasis::Linear(1)], 1));
    }
}
