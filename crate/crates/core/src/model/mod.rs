//! State model of the factor process and its jump distribution.
//!
//! The state solves `dX = b(X) dt + c(X) dW + dJ`, where jumps arrive with
//! intensity `λ(X)` and have a state-independent size distribution `Q`. The
//! diffusion enters the consistency conditions through `a = ½ c cᵀ`.

mod coefficient;
mod measure;

pub use coefficient::CoefficientFunction;
pub use measure::{Atom, JumpMeasure, DEFAULT_TOL};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Number of quasi-random points probed when validating a model.
pub const VALIDATION_PROBES: usize = 100;

/// Per-coordinate bounds of the state space; bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid("domain bounds differ in length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l.is_nan() || u.is_nan() || l >= u) {
            return Err(Error::invalid("every domain interval needs lower < upper"));
        }
        Ok(DomainBox { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        DomainBox {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    /// Finite window used for probing: infinite sides are replaced by a
    /// unit-length window next to the finite bound (or `[-1, 1]`).
    pub fn probe_window(&self) -> (Vec<f64>, Vec<f64>) {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
                (true, true) => (l, u),
                (true, false) => (l, l + 1.0),
                (false, true) => (u - 1.0, u),
                (false, false) => (-1.0, 1.0),
            })
            .unzip()
    }

    /// `count` Halton points inside the probe window, strictly interior.
    pub fn probe_points(&self, count: usize) -> Vec<Vec<f64>> {
        let (lo, hi) = self.probe_window();
        (1..=count)
            .map(|k| {
                (0..self.dim())
                    .map(|d| {
                        let u = halton(k, PRIMES[d % PRIMES.len()]);
                        lo[d] + (hi[d] - lo[d]) * u
                    })
                    .collect()
            })
            .collect()
    }
}

const PRIMES: [usize; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Radical inverse of `index` in the given base, in (0, 1) for index > 0.
pub fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// `a = ½ c cᵀ`, symmetrized.
pub fn make_diffusion_matrix(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !c.is_square() {
        return Err(Error::invalid("diffusion matrix must be square"));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("diffusion matrix has non-finite entries"));
    }
    let a = c * c.transpose() * 0.5;
    Ok((&a + a.transpose()) * 0.5)
}

/// An affine map `x -> constant + linear * x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub constant: DVector<f64>,
    pub linear: DMatrix<f64>,
}

impl AffineForm {
    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        &self.constant + &self.linear * DVector::from_column_slice(x)
    }
}

/// The drift, covariance and intensity of an affine model, each written as
/// an affine function of the state. The covariance is flattened row-major.
#[derive(Debug, Clone)]
pub struct AffineCoefficients {
    pub drift: AffineForm,
    pub covariance: AffineForm,
    pub intensity: AffineForm,
}

/// Jump-diffusion state model with state-independent jump sizes.
#[derive(Debug, Clone)]
pub struct JumpDiffusionModel {
    dim: usize,
    domain: DomainBox,
    drift: CoefficientFunction,
    diffusion: CoefficientFunction,
    intensity: CoefficientFunction,
    jumps: JumpMeasure,
}

impl JumpDiffusionModel {
    /// Builds and validates a model: dimensions must agree, and at
    /// [`VALIDATION_PROBES`] quasi-random points of the domain the covariance
    /// must be positive semi-definite and the intensity non-negative.
    pub fn new(
        domain: DomainBox,
        drift: CoefficientFunction,
        diffusion: CoefficientFunction,
        intensity: CoefficientFunction,
        jumps: JumpMeasure,
    ) -> Result<Self> {
        let dim = domain.dim();
        if dim == 0 {
            return Err(Error::invalid("model dimension must be positive"));
        }
        let shape_checks = [
            ("drift", &drift, dim),
            ("diffusion", &diffusion, dim * dim),
            ("intensity", &intensity, 1),
        ];
        for (name, f, out) in shape_checks {
            if f.input_dim() != dim || f.output_dim() != out {
                return Err(Error::invalid(format!(
                    "{name} maps R^{} -> R^{}, expected R^{dim} -> R^{out}",
                    f.input_dim(),
                    f.output_dim()
                )));
            }
        }
        jumps.validate()?;
        if jumps.dim() != dim {
            return Err(Error::invalid(format!(
                "jump measure has dimension {}, model has {dim}",
                jumps.dim()
            )));
        }
        let model = JumpDiffusionModel {
            dim,
            domain,
            drift,
            diffusion,
            intensity,
            jumps,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        for x in self.domain.probe_points(VALIDATION_PROBES) {
            let b = self.drift_at(&x);
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("drift is not finite at {x:?}")));
            }
            let a = make_diffusion_matrix(&self.diffusion_at(&x))
                .map_err(|_| Error::invalid(format!("diffusion is not finite at {x:?}")))?;
            let min_eig = SymmetricEigen::new(a).eigenvalues.min();
            if min_eig < -1e-10 {
                return Err(Error::invalid(format!(
                    "covariance is not positive semi-definite at {x:?} (eigenvalue {min_eig})"
                )));
            }
            let lambda = self.intensity_at(&x);
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::invalid(format!("intensity {lambda} at {x:?} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn jumps(&self) -> &JumpMeasure {
        &self.jumps
    }

    pub fn drift(&self) -> &CoefficientFunction {
        &self.drift
    }

    pub fn diffusion(&self) -> &CoefficientFunction {
        &self.diffusion
    }

    pub fn intensity(&self) -> &CoefficientFunction {
        &self.intensity
    }

    pub fn drift_at(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.drift.eval(x))
    }

    /// The diffusion matrix `c(x)`.
    pub fn diffusion_at(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.diffusion.eval(x))
    }

    /// The covariance `a(x) = ½ c(x) c(x)ᵀ`.
    pub fn covariance_at(&self, x: &[f64]) -> DMatrix<f64> {
        let c = self.diffusion_at(x);
        let a = &c * c.transpose() * 0.5;
        (&a + a.transpose()) * 0.5
    }

    pub fn intensity_at(&self, x: &[f64]) -> f64 {
        let mut out = [0.0];
        self.intensity.eval_into(x, &mut out);
        out[0]
    }

    /// Copy of the model with a different drift.
    pub fn with_drift(&self, drift: CoefficientFunction) -> Result<Self> {
        Self::new(
            self.domain.clone(),
            drift,
            self.diffusion.clone(),
            self.intensity.clone(),
            self.jumps.clone(),
        )
    }

    /// Copy of the model with a different intensity.
    pub fn with_intensity(&self, intensity: CoefficientFunction) -> Result<Self> {
        Self::new(
            self.domain.clone(),
            self.drift.clone(),
            self.diffusion.clone(),
            intensity,
            self.jumps.clone(),
        )
    }

    /// Copy of the model with a different jump distribution.
    pub fn with_jumps(&self, jumps: JumpMeasure) -> Result<Self> {
        Self::new(
            self.domain.clone(),
            self.drift.clone(),
            self.diffusion.clone(),
            self.intensity.clone(),
            jumps,
        )
    }

    /// Reads off `b`, `a` and `λ` as affine functions of the state.
    ///
    /// Callable coefficients are probed: the linear part comes from unit
    /// differences around an interior point, and the fit is then verified at
    /// quasi-random points. Fails with [`Error::NotAffine`] naming the first
    /// coefficient that is not affine.
    pub fn affine_coefficients(&self) -> Result<AffineCoefficients> {
        let covariance = |x: &[f64]| self.covariance_at(x).transpose().as_slice().to_vec();
        let drift = |x: &[f64]| self.drift.eval(x);
        let intensity = |x: &[f64]| self.intensity.eval(x);
        Ok(AffineCoefficients {
            drift: probe_affine("drift b(x)", &self.domain, &drift)?,
            covariance: probe_affine("covariance a(x)", &self.domain, &covariance)?,
            intensity: probe_affine("intensity λ(x)", &self.domain, &intensity)?,
        })
    }
}

fn probe_affine(name: &str, domain: &DomainBox, f: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<AffineForm> {
    let n = domain.dim();
    let (lo, hi) = domain.probe_window();
    let base: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let f0 = DVector::from_vec(f(&base));
    let m = f0.len();
    let mut linear = DMatrix::zeros(m, n);
    for i in 0..n {
        let step = 0.5 * (hi[i] - lo[i]);
        let mut x = base.clone();
        x[i] += step;
        let fi = DVector::from_vec(f(&x));
        linear.set_column(i, &((fi - &f0) / step));
    }
    let constant = &f0 - &linear * DVector::from_column_slice(&base);
    let form = AffineForm { constant, linear };
    for x in domain.probe_points(16) {
        let actual = DVector::from_vec(f(&x));
        let fitted = form.eval(&x);
        let scale = 1.0 + actual.amax();
        if (actual - fitted).amax() > 1e-9 * scale {
            return Err(Error::NotAffine {
                function: name.to_string(),
            });
        }
    }
    Ok(form)
}
