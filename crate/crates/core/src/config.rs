//! JSON run configuration shared by the command-line front end and the
//! C interface.
//!
//! A configuration names a model (a preset or explicit affine tables), a
//! curve family, evaluation grids and numerical controls. Unbounded domain
//! sides and coordinates without jumps are written as `null`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::consistency::{DEFAULT_TAU_GRID, DEFAULT_TOLERANCE, DEFAULT_X_POINTS};
use crate::curve::{ForwardCurve, NumericCurve};
use crate::error::{Error, Result};
use crate::model::{Atom, CoefficientFunction, DomainBox, JumpDiffusionModel, JumpMeasure};
use crate::nelson_siegel::{ns_fitted_drift_function, NelsonSiegel};
use crate::presets;
use crate::separable::{build_gre, build_ode_system, solve_gre, HPath, SeparableFamily, StateBasis};

/// Names of the operations a configuration can drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Price,
    Check,
    Recover,
    NsDemo,
    Simulate,
    Martingale,
}

impl CommandName {
    pub fn is_stochastic(self) -> bool {
        matches!(self, CommandName::Simulate | CommandName::Martingale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// When present, must match the command being run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandName>,
    pub model: ModelSpec,
    /// Defaults to the Nelson–Siegel family for the `ns-trivial` preset and
    /// to the affine family otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
    /// Initial or evaluation state; presets supply a default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<f64>>,
    /// Constant added to the drift after the family has been derived, so
    /// that the dynamics no longer match the family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_shift: Option<Vec<f64>>,
    /// Jump law assumed by `recover`; defaults to the model's, or to
    /// exponential probe jumps when the model has none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_jumps: Option<JumpSpec>,
    #[serde(default)]
    pub grids: GridSpec,
    #[serde(default)]
    pub numerics: NumericSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
}

/// Dynamics of the state process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Preset(PresetSpec),
    Affine(AffineModelSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    /// `dX = κ(μ - X) dt + σ dW`
    Vasicek,
    /// `dX = κ(μ - X) dt + σ √X dW` on `X ≥ 0`
    CirLike,
    /// Vasicek plus exponential jumps
    JumpVasicek,
    /// Exponential jumps only
    PureJump,
    /// Four-factor Nelson–Siegel state with the fitted drift, constant
    /// covariance (zero by default) and no jumps unless an intensity is set.
    NsTrivial,
}

/// A named model with optional parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PresetSpec {
    pub name: PresetName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Jump intensity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
    /// Rate of the exponential jump sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// `ns-trivial` only: the constant covariance matrix `a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    /// `ns-trivial` only: jump sizes used when `intensity` is positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<JumpSpec>,
}

const DEFAULT_KAPPA: f64 = 0.5;
const DEFAULT_MU: f64 = 0.04;
const DEFAULT_SIGMA: f64 = 0.02;
const DEFAULT_CIR_SIGMA: f64 = 0.1;
const DEFAULT_INTENSITY: f64 = 0.3;
const DEFAULT_RATE: f64 = 50.0;

/// An affine scalar `constant + linear · x`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AffineScalar {
    #[serde(default)]
    pub constant: f64,
    /// Empty means zero.
    #[serde(default)]
    pub linear: Vec<f64>,
}

/// An affine vector `constant + linear x`, `linear` given by rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AffineVector {
    pub constant: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<Vec<Vec<f64>>>,
}

/// `c(x) = matrix · diag(√max(0, scale_j(x)))`; without `scale` the
/// diffusion is the constant `matrix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    /// Rows of the `n × n` loading matrix.
    pub matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<AffineScalar>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AffineModelSpec {
    pub dim: usize,
    /// Per-coordinate lower bounds, `null` for unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<Option<f64>>>,
    pub drift: AffineVector,
    /// Absent means no diffusion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionSpec>,
    #[serde(default)]
    pub intensity: AffineScalar,
    #[serde(default)]
    pub jumps: JumpSpec,
}

/// Jump-size distribution.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JumpSpec {
    /// No jumps.
    #[default]
    None,
    Point {
        point: Vec<f64>,
    },
    Discrete {
        atoms: Vec<AtomSpec>,
    },
    /// Independent exponential coordinates; `null` rate means no jump in
    /// that coordinate. `negative` mirrors a coordinate to the negative
    /// half-line.
    Exponential {
        rates: Vec<Option<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        negative: Option<Vec<bool>>,
    },
    Gaussian {
        mean: Vec<f64>,
        stddev: Vec<f64>,
        /// Truncate a coordinate to the non-negative half-line.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate: Option<Vec<bool>>,
    },
    Empirical {
        samples: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Forward-curve family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilySpec {
    /// Affine family solved from the Riccati equations of the model;
    /// `theta` is `h(0)` for the basis `(1, x1, …, xn)` and defaults to the
    /// short rate `x1`.
    Affine {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<Vec<f64>>,
    },
    /// Separable family with a named basis such as `"1"`, `"x2"`,
    /// `"x1*x2"` or `"x1^2"`.
    Separable { basis: Vec<String>, theta: Vec<f64> },
    NelsonSiegel,
    /// The base family seen only through its values.
    Numeric { base: Box<FamilySpec> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Maturities for checks, scans and recovery.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
    /// Explicit evaluation states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_points: Option<Vec<Vec<f64>>>,
    /// Number of quasi-random domain states when `x_points` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_count: Option<usize>,
    /// Maturities written by `price`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_taus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct NumericSpec {
    /// Consistency tolerance on the max-abs residual.
    pub tol: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Tolerance of jump-measure quadrature.
    pub quad_tol: f64,
    pub tau_max: f64,
    pub dt: f64,
    pub n_paths: usize,
    /// Mandatory for `simulate` and `martingale` unless given on the
    /// command line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Simulation horizon of `simulate` and bond maturity it prices.
    pub horizon: f64,
    /// Observation time of the martingale test.
    pub t: f64,
    /// Bond maturity of the martingale test.
    pub maturity: f64,
    /// Random `(x, a, b)` probes of the coefficient discrepancy table.
    pub discrepancy_probes: usize,
}

impl Default for NumericSpec {
    fn default() -> Self {
        NumericSpec {
            tol: DEFAULT_TOLERANCE,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            quad_tol: 1e-12,
            tau_max: 30.0,
            dt: 1e-3,
            n_paths: 100_000,
            seed: None,
            horizon: 5.0,
            t: 1.0,
            maturity: 5.0,
            discrepancy_probes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory; the command line `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// A solved or closed-form curve family.
#[derive(Clone)]
pub struct BuiltFamily {
    pub curve: Arc<dyn ForwardCurve>,
    /// The Riccati solution behind a separable family.
    pub path: Option<HPath>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    /// JSON schema of the configuration format.
    pub fn schema() -> String {
        serde_json::to_string_pretty(&schemars::schema_for!(RunConfig)).expect("schemas serialize")
    }

    /// A complete configuration around a preset with default parameters.
    pub fn preset(name: PresetName) -> Self {
        RunConfig {
            command: None,
            model: ModelSpec::Preset(PresetSpec::named(name)),
            family: None,
            state: None,
            drift_shift: None,
            recovery_jumps: None,
            grids: GridSpec::default(),
            numerics: NumericSpec::default(),
            outputs: OutputSpec::default(),
        }
    }

    /// Checks the parts that do not need the model to be built.
    pub fn validate(&self) -> Result<()> {
        let n = &self.numerics;
        for (name, v) in [
            ("tol", n.tol),
            ("rel_tol", n.rel_tol),
            ("abs_tol", n.abs_tol),
            ("quad_tol", n.quad_tol),
            ("tau_max", n.tau_max),
            ("dt", n.dt),
            ("horizon", n.horizon),
            ("t", n.t),
            ("maturity", n.maturity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("numerics.{name} must be positive and finite, got {v}")));
            }
        }
        let taus = self.grids.taus.iter().chain(&self.grids.output_taus).flatten();
        if let Some(t) = taus.clone().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(Error::invalid(format!("maturities must be finite and >= 0, got {t}")));
        }
        if let Some(t) = taus.clone().find(|t| **t > n.tau_max) {
            return Err(Error::invalid(format!("maturity {t} exceeds numerics.tau_max = {}", n.tau_max)));
        }
        if self.grids.x_count == Some(0) || self.grids.x_points.as_ref().is_some_and(|p| p.is_empty()) {
            return Err(Error::invalid("state grid must be non-empty"));
        }
        Ok(())
    }

    fn preset_spec(&self) -> Option<&PresetSpec> {
        match &self.model {
            ModelSpec::Preset(p) => Some(p),
            ModelSpec::Affine(_) => None,
        }
    }

    /// The model the family is derived from.
    pub fn base_model(&self) -> Result<JumpDiffusionModel> {
        self.model.build()
    }

    /// The model whose dynamics are simulated and checked: the base model
    /// with `drift_shift` applied.
    pub fn dynamics(&self, base: &JumpDiffusionModel) -> Result<JumpDiffusionModel> {
        match &self.drift_shift {
            None => Ok(base.clone()),
            Some(shift) => {
                let n = base.dim();
                if shift.len() != n {
                    return Err(Error::invalid(format!("drift_shift has {} entries, model dimension is {n}", shift.len())));
                }
                let original = base.drift().clone();
                let shift = shift.clone();
                base.with_drift(CoefficientFunction::callable(n, n, move |x, out| {
                    original.eval_into(x, out);
                    for (o, s) in out.iter_mut().zip(&shift) {
                        *o += s;
                    }
                }))
            }
        }
    }

    pub fn family_spec(&self) -> FamilySpec {
        match (&self.family, self.preset_spec().map(|p| p.name)) {
            (Some(f), _) => f.clone(),
            (None, Some(PresetName::NsTrivial)) => FamilySpec::NelsonSiegel,
            (None, _) => FamilySpec::Affine { theta: None },
        }
    }

    pub fn build_family(&self, model: &JumpDiffusionModel) -> Result<BuiltFamily> {
        self.family_spec().build(model, &self.numerics)
    }

    /// The configured state, or the preset default.
    pub fn state(&self, model: &JumpDiffusionModel) -> Result<Vec<f64>> {
        let x = match (&self.state, self.preset_spec().map(|p| p.name)) {
            (Some(x), _) => x.clone(),
            (None, Some(PresetName::NsTrivial)) => NS_DEFAULT_STATE.to_vec(),
            (None, Some(_)) => vec![0.03],
            (None, None) => return Err(Error::invalid("`state` is required for explicit models")),
        };
        if x.len() != model.dim() {
            return Err(Error::invalid(format!("state has {} entries, model dimension is {}", x.len(), model.dim())));
        }
        if !model.domain().contains(&x) {
            return Err(Error::OutOfDomain {
                what: "model".into(),
                point: x,
            });
        }
        Ok(x)
    }

    /// Evaluation states: explicit points, or quasi-random domain points.
    pub fn x_points(&self, model: &JumpDiffusionModel) -> Result<Vec<Vec<f64>>> {
        match &self.grids.x_points {
            Some(points) => {
                if let Some(p) = points.iter().find(|p| p.len() != model.dim()) {
                    return Err(Error::invalid(format!(
                        "x point {p:?} does not have the model dimension {}",
                        model.dim()
                    )));
                }
                Ok(points.clone())
            }
            None => Ok(model.domain().probe_points(self.grids.x_count.unwrap_or(DEFAULT_X_POINTS))),
        }
    }

    pub fn taus(&self) -> Vec<f64> {
        self.grids.taus.clone().unwrap_or_else(|| DEFAULT_TAU_GRID.to_vec())
    }

    /// Maturities written by `price`: the given list, or steps of 0.25 up
    /// to `tau_max`.
    pub fn output_taus(&self) -> Vec<f64> {
        self.grids.output_taus.clone().unwrap_or_else(|| {
            let steps = (self.numerics.tau_max / 0.25).floor() as usize;
            let mut taus: Vec<f64> = (0..=steps).map(|k| 0.25 * k as f64).collect();
            if taus.last().is_some_and(|t| *t < self.numerics.tau_max) {
                taus.push(self.numerics.tau_max);
            }
            taus
        })
    }
}

const NS_DEFAULT_STATE: [f64; 4] = [0.04, -0.02, 0.03, 0.8];

impl ModelSpec {
    pub fn build(&self) -> Result<JumpDiffusionModel> {
        match self {
            ModelSpec::Preset(p) => p.build(),
            ModelSpec::Affine(a) => a.build(),
        }
    }
}

impl PresetSpec {
    pub fn named(name: PresetName) -> Self {
        PresetSpec {
            name,
            kappa: None,
            mu: None,
            sigma: None,
            intensity: None,
            rate: None,
            covariance: None,
            jumps: None,
        }
    }

    pub fn build(&self) -> Result<JumpDiffusionModel> {
        let name = self.name;
        let kappa = self.kappa.unwrap_or(DEFAULT_KAPPA);
        let mu = self.mu.unwrap_or(DEFAULT_MU);
        let intensity = self.intensity.unwrap_or(DEFAULT_INTENSITY);
        let rate = self.rate.unwrap_or(DEFAULT_RATE);
        if name != PresetName::NsTrivial && (self.covariance.is_some() || self.jumps.is_some()) {
            return Err(Error::invalid("`covariance` and `jumps` apply to the ns-trivial preset only"));
        }
        match name {
            PresetName::Vasicek => presets::vasicek(kappa, mu, self.sigma.unwrap_or(DEFAULT_SIGMA)),
            PresetName::CirLike => presets::cir(kappa, mu, self.sigma.unwrap_or(DEFAULT_CIR_SIGMA)),
            PresetName::JumpVasicek => {
                presets::jump_vasicek(kappa, mu, self.sigma.unwrap_or(DEFAULT_SIGMA), intensity, rate)
            }
            PresetName::PureJump => presets::pure_jump(intensity, rate),
            PresetName::NsTrivial => self.build_ns(),
        }
    }

    fn build_ns(&self) -> Result<JumpDiffusionModel> {
        if self.kappa.is_some() || self.mu.is_some() || self.sigma.is_some() || self.rate.is_some() {
            return Err(Error::invalid("ns-trivial takes only `covariance`, `intensity` and `jumps`"));
        }
        let c = match &self.covariance {
            None => DMatrix::zeros(4, 4),
            Some(rows) => covariance_root(&matrix_from_rows(rows, 4, "covariance")?)?,
        };
        let jumps = match &self.jumps {
            None => JumpMeasure::dirac_zero(4),
            Some(spec) => spec.build(4)?,
        };
        let domain = DomainBox::new(
            vec![f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0],
            vec![f64::INFINITY; 4],
        )?;
        JumpDiffusionModel::new(
            domain,
            ns_fitted_drift_function(),
            CoefficientFunction::constant(c.transpose().as_slice().to_vec(), 4),
            CoefficientFunction::constant(vec![self.intensity.unwrap_or(0.0)], 4),
            jumps,
        )
    }
}

/// `c` with `½ c cᵀ = a` for a symmetric positive semi-definite `a`.
fn covariance_root(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if (a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
        return Err(Error::invalid("covariance must be symmetric"));
    }
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.min() < -1e-12 {
        return Err(Error::invalid("covariance must be positive semi-definite"));
    }
    let roots = eig.eigenvalues.map(|l| (2.0 * l.max(0.0)).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::invalid(format!("{what} must be {n} x {n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn bounds(values: &Option<Vec<Option<f64>>>, n: usize, missing: f64, what: &str) -> Result<Vec<f64>> {
    match values {
        None => Ok(vec![missing; n]),
        Some(v) if v.len() == n => Ok(v.iter().map(|b| b.unwrap_or(missing)).collect()),
        Some(v) => Err(Error::invalid(format!("{what} has {} entries, expected {n}", v.len()))),
    }
}

fn linear_row(linear: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match linear.len() {
        0 => Ok(vec![0.0; n]),
        len if len == n => Ok(linear.to_vec()),
        len => Err(Error::invalid(format!("{what} has {len} linear entries, expected {n}"))),
    }
}

impl AffineModelSpec {
    pub fn build(&self) -> Result<JumpDiffusionModel> {
        let n = self.dim;
        if n == 0 {
            return Err(Error::invalid("model dimension must be positive"));
        }
        let domain = DomainBox::new(
            bounds(&self.lower, n, f64::NEG_INFINITY, "lower")?,
            bounds(&self.upper, n, f64::INFINITY, "upper")?,
        )?;
        if self.drift.constant.len() != n {
            return Err(Error::invalid(format!("drift constant must have {n} entries")));
        }
        let drift_linear = match &self.drift.linear {
            None => DMatrix::zeros(n, n),
            Some(rows) => matrix_from_rows(rows, n, "drift linear part")?,
        };
        let drift = CoefficientFunction::affine(self.drift.constant.clone(), drift_linear)?;

        let diffusion = match &self.diffusion {
            None => CoefficientFunction::zero(n * n, n),
            Some(spec) => spec.build(n)?,
        };
        let intensity = CoefficientFunction::affine(
            vec![self.intensity.constant],
            DMatrix::from_row_slice(1, n, &linear_row(&self.intensity.linear, n, "intensity")?),
        )?;
        JumpDiffusionModel::new(domain, drift, diffusion, intensity, self.jumps.build(n)?)
    }
}

impl DiffusionSpec {
    fn build(&self, n: usize) -> Result<CoefficientFunction> {
        let matrix = matrix_from_rows(&self.matrix, n, "diffusion matrix")?;
        let Some(scale) = &self.scale else {
            return Ok(CoefficientFunction::constant(matrix.transpose().as_slice().to_vec(), n));
        };
        if scale.len() != n {
            return Err(Error::invalid(format!("diffusion scale must have {n} entries")));
        }
        let scale: Vec<(f64, Vec<f64>)> = scale
            .iter()
            .map(|s| Ok((s.constant, linear_row(&s.linear, n, "diffusion scale")?)))
            .collect::<Result<_>>()?;
        Ok(CoefficientFunction::callable(n, n * n, move |x, out| {
            for (j, (c0, lin)) in scale.iter().enumerate() {
                let s = (c0 + lin.iter().zip(x).map(|(l, v)| l * v).sum::<f64>()).max(0.0).sqrt();
                for i in 0..n {
                    out[i * n + j] = matrix[(i, j)] * s;
                }
            }
        }))
    }
}

impl JumpSpec {
    pub fn build(&self, n: usize) -> Result<JumpMeasure> {
        let measure = match self {
            JumpSpec::None => JumpMeasure::dirac_zero(n),
            JumpSpec::Point { point } => JumpMeasure::point(point.clone()),
            JumpSpec::Discrete { atoms } => JumpMeasure::discrete(
                atoms
                    .iter()
                    .map(|a| Atom {
                        point: a.point.clone(),
                        weight: a.weight,
                    })
                    .collect(),
            )?,
            JumpSpec::Exponential { rates, negative } => JumpMeasure::ExponentialProduct {
                rates: rates.iter().map(|r| r.unwrap_or(f64::INFINITY)).collect(),
                negative: negative.clone().unwrap_or_else(|| vec![false; rates.len()]),
            },
            JumpSpec::Gaussian { mean, stddev, truncate } => JumpMeasure::gaussian(
                mean.clone(),
                stddev.clone(),
                truncate.clone().unwrap_or_else(|| vec![false; mean.len()]),
            )?,
            JumpSpec::Empirical { samples } => JumpMeasure::empirical(samples.clone())?,
        };
        measure.validate()?;
        if measure.dim() != n {
            return Err(Error::invalid(format!(
                "jump measure has dimension {}, model has {n}",
                measure.dim()
            )));
        }
        Ok(measure)
    }
}

/// Parses `"1"`, `"x3"`, `"x1*x2"` or `"x2^2"` (coordinates from 1).
pub fn parse_basis(name: &str) -> Result<StateBasis> {
    let bad = || Error::invalid(format!("unknown basis function `{name}`"));
    let coord = |s: &str| -> Result<usize> {
        let i: usize = s.trim().strip_prefix('x').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        i.checked_sub(1).ok_or_else(bad)
    };
    let name = name.trim();
    if name == "1" {
        Ok(StateBasis::Constant)
    } else if let Some((l, r)) = name.split_once('*') {
        Ok(StateBasis::Quadratic(coord(l)?, coord(r)?))
    } else if let Some(base) = name.strip_suffix("^2") {
        let i = coord(base)?;
        Ok(StateBasis::Quadratic(i, i))
    } else {
        Ok(StateBasis::Linear(coord(name)?))
    }
}

impl FamilySpec {
    pub fn build(&self, model: &JumpDiffusionModel, numerics: &NumericSpec) -> Result<BuiltFamily> {
        let solve = |system| solve_gre(&system, numerics.tau_max, numerics.rel_tol, numerics.abs_tol);
        let separable = |path: HPath| BuiltFamily {
            curve: Arc::new(SeparableFamily::from_path(path.clone())),
            path: Some(path),
        };
        match self {
            FamilySpec::Affine { theta } => {
                let n = model.dim();
                let theta = theta.clone().unwrap_or_else(|| {
                    let mut t = vec![0.0; n + 1];
                    t[1] = 1.0;
                    t
                });
                Ok(separable(solve(build_gre(model, &theta)?)?))
            }
            FamilySpec::Separable { basis, theta } => {
                let basis = basis.iter().map(|b| parse_basis(b)).collect::<Result<Vec<_>>>()?;
                Ok(separable(solve(build_ode_system(&basis, theta, model, None)?)?))
            }
            FamilySpec::NelsonSiegel => {
                if model.dim() != 4 {
                    return Err(Error::invalid("the Nelson–Siegel family needs a four-dimensional model"));
                }
                Ok(BuiltFamily {
                    curve: Arc::new(NelsonSiegel),
                    path: None,
                })
            }
            FamilySpec::Numeric { base } => {
                let base = base.build(model, numerics)?;
                Ok(BuiltFamily {
                    curve: Arc::new(NumericCurve::from_curve(base.curve)),
                    path: None,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_names() {
        assert!(matches!(parse_basis("1").unwrap(), StateBasis::Constant));
        assert!(matches!(parse_basis("x2").unwrap(), StateBasis::Linear(1)));
        assert!(matches!(parse_basis("x1*x3").unwrap(), StateBasis::Quadratic(0, 2)));
        assert!(matches!(parse_basis("x2^2").unwrap(), StateBasis::Quadratic(1, 1)));
        assert!(parse_basis("x0").is_err());
        assert!(parse_basis("y1").is_err());
    }

    #[test]
    fn covariance_root_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.01]);
        let c = covariance_root(&a).unwrap();
        assert!((&c * c.transpose() * 0.5 - a).amax() < 1e-15);
    }
}
