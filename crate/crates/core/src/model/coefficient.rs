use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

type CallableFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A deterministic map `R^n -> R^m`.
///
/// Matrix-valued coefficients (the diffusion `c`) are flattened row-major,
/// so an `n x n` matrix has output dimension `n * n`.
#[derive(Clone)]
pub enum CoefficientFunction {
    Affine {
        constant: DVector<f64>,
        linear: DMatrix<f64>,
    },
    Callable {
        input_dim: usize,
        output_dim: usize,
        f: CallableFn,
    },
}

impl fmt::Debug for CoefficientFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientFunction::Affine { constant, linear } => f
                .debug_struct("Affine")
                .field("constant", &constant.as_slice())
                .field("linear", linear)
                .finish(),
            CoefficientFunction::Callable {
                input_dim,
                output_dim,
                ..
            } => f
                .debug_struct("Callable")
                .field("input_dim", input_dim)
                .field("output_dim", output_dim)
                .finish_non_exhaustive(),
        }
    }
}

impl CoefficientFunction {
    pub fn affine(constant: Vec<f64>, linear: DMatrix<f64>) -> Result<Self> {
        if linear.nrows() != constant.len() {
            return Err(Error::invalid(format!(
                "affine coefficient: {} constants but {} linear rows",
                constant.len(),
                linear.nrows()
            )));
        }
        if constant.iter().chain(linear.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine coefficient entries must be finite"));
        }
        Ok(CoefficientFunction::Affine {
            constant: DVector::from_vec(constant),
            linear,
        })
    }

    /// A constant map with the given output values.
    pub fn constant(values: Vec<f64>, input_dim: usize) -> Self {
        let m = values.len();
        CoefficientFunction::Affine {
            constant: DVector::from_vec(values),
            linear: DMatrix::zeros(m, input_dim),
        }
    }

    pub fn zero(output_dim: usize, input_dim: usize) -> Self {
        Self::constant(vec![0.0; output_dim], input_dim)
    }

    pub fn callable<F>(input_dim: usize, output_dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        CoefficientFunction::Callable {
            input_dim,
            output_dim,
            f: Arc::new(f),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CoefficientFunction::Affine { linear, .. } => linear.ncols(),
            CoefficientFunction::Callable { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            CoefficientFunction::Affine { constant, .. } => constant.len(),
            CoefficientFunction::Callable { output_dim, .. } => *output_dim,
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            CoefficientFunction::Affine { constant, linear } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = constant[i];
                    for (j, xj) in x.iter().enumerate() {
                        acc += linear[(i, j)] * xj;
                    }
                    *o = acc;
                }
            }
            CoefficientFunction::Callable { f, .. } => f(x, out),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(x, &mut out);
        out
    }
}
