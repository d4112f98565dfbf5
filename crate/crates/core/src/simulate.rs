//! Monte Carlo simulation of the state process, bond pricing by
//! simulation, the martingale test and the HJM drift.
//!
//! Path `i` of a run with seed `s` draws from ChaCha8 seeded with `s` on
//! stream `i`, so results do not depend on how paths are scheduled.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::ForwardCurve;
use crate::error::{Error, Result};
use crate::model::{JumpDiffusionModel, JumpMeasure};
use crate::output::write_csv;
use crate::quadrature::integrate;

/// Jump probability per step above which a warning suggests a smaller step.
pub const INTENSITY_DT_WARNING: f64 = 0.1;

/// Smallest path count accepted by the Monte Carlo estimators.
pub const MIN_PATHS: usize = 100;

/// A jump of a simulated path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: Vec<f64>,
}

/// One simulated path on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimPath {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub path_index: u64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub jumps: Vec<JumpEvent>,
    /// The state left the domain box at least once and was projected back.
    pub flagged: bool,
}

impl SimPath {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("a path has at least its initial state")
    }

    /// CSV with columns `t, x1.., jump`, where `jump` is 1 on the nodes
    /// reached by a step that contained a jump.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.states[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|i| format!("x{i}")));
        header.push("jump".into());
        let mut jump_iter = self.jumps.iter().peekable();
        let rows = self.times.iter().zip(&self.states).map(move |(t, x)| {
            let mut row = vec![*t];
            row.extend(x);
            let mut flag = 0.0;
            while jump_iter.peek().is_some_and(|j| j.time <= *t) {
                jump_iter.next();
                flag = 1.0;
            }
            row.push(flag);
            row
        });
        write_csv(out, &header, rows)
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub flagged_paths: usize,
}

fn grid(horizon: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if !(horizon.is_finite() && horizon >= dt * (1.0 - 1e-12)) {
        return Err(Error::invalid(format!("horizon {horizon} must be at least one step {dt}")));
    }
    let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    Ok((steps, horizon / steps as f64))
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Reusable buffers for Euler steps of one model.
struct Stepper<'a> {
    model: &'a JumpDiffusionModel,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    noise: Vec<f64>,
    mark: Vec<f64>,
    jumps_possible: bool,
    flagged: bool,
    max_intensity_dt: f64,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a JumpDiffusionModel) -> Self {
        let n = model.dim();
        Stepper {
            model,
            drift: vec![0.0; n],
            diffusion: vec![0.0; n * n],
            noise: vec![0.0; n],
            mark: vec![0.0; n],
            jumps_possible: !model.jumps().is_dirac_zero(),
            flagged: false,
            max_intensity_dt: 0.0,
        }
    }

    /// Advances `x` by one step of length `h`; returns whether a jump occurred.
    fn step<R: Rng>(&mut self, x: &mut [f64], h: f64, rng: &mut R) -> Result<bool> {
        let n = x.len();
        let intensity = if self.jumps_possible { self.model.intensity_at(x) } else { 0.0 };
        self.model.drift().eval_into(x, &mut self.drift);
        self.model.diffusion().eval_into(x, &mut self.diffusion);
        let sqrt_h = h.sqrt();
        for z in self.noise.iter_mut() {
            *z = rng.sample::<f64, _>(StandardNormal) * sqrt_h;
        }
        for i in 0..n {
            let row = &self.diffusion[i * n..(i + 1) * n];
            let shock: f64 = row.iter().zip(&self.noise).map(|(c, z)| c * z).sum();
            x[i] += self.drift[i] * h + shock;
        }
        let mut jumped = false;
        if intensity > 0.0 {
            let p = intensity * h;
            if p > 1.0 {
                return Err(Error::StepSize { intensity_dt: p });
            }
            self.max_intensity_dt = self.max_intensity_dt.max(p);
            if rng.random::<f64>() < p {
                self.model.jumps().sample_into(rng, &mut self.mark);
                for (v, d) in x.iter_mut().zip(&self.mark) {
                    *v += d;
                }
                jumped = true;
            }
        }
        let domain = self.model.domain();
        for (i, v) in x.iter_mut().enumerate() {
            if *v < domain.lower[i] || *v > domain.upper[i] {
                *v = v.clamp(domain.lower[i], domain.upper[i]);
                self.flagged = true;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("simulated state became non-finite; reduce dt"));
        }
        Ok(jumped)
    }
}

fn check_start(model: &JumpDiffusionModel, x0: &[f64]) -> Result<()> {
    if x0.len() != model.dim() || !model.domain().contains(x0) {
        return Err(Error::OutOfDomain {
            what: "model domain (initial state)".into(),
            point: x0.to_vec(),
        });
    }
    Ok(())
}

fn warn_intensity(max_intensity_dt: f64) {
    if max_intensity_dt > INTENSITY_DT_WARNING {
        log::warn!(
            "jump probability per step reached {max_intensity_dt:.3}; \
             the one-jump-per-step scheme is biased, consider a smaller dt"
        );
    }
}

/// Simulates path `path_index` of the run with the given seed.
pub fn simulate_path(
    model: &JumpDiffusionModel,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    seed: u64,
    path_index: u64,
) -> Result<SimPath> {
    check_start(model, x0)?;
    let (steps, h) = grid(horizon, dt)?;
    let mut rng = path_rng(seed, path_index);
    let mut stepper = Stepper::new(model);
    let mut x = x0.to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x.clone());
    let mut jumps = Vec::new();
    for k in 1..=steps {
        let t = k as f64 * h;
        if stepper.step(&mut x, h, &mut rng)? {
            jumps.push(JumpEvent {
                time: t,
                mark: stepper.mark.clone(),
            });
        }
        times.push(t);
        states.push(x.clone());
    }
    warn_intensity(stepper.max_intensity_dt);
    Ok(SimPath {
        dt: h,
        horizon,
        seed,
        path_index,
        times,
        states,
        jumps,
        flagged: stepper.flagged,
    })
}

/// Euler–Maruyama simulation of the state SDE with at most one jump per
/// step, drawn with probability `λ(X)·dt`. The step is shrunk slightly
/// when needed so that the grid ends exactly at `horizon`.
pub fn simulate_state(model: &JumpDiffusionModel, x0: &[f64], horizon: f64, dt: f64, seed: u64) -> Result<SimPath> {
    simulate_path(model, x0, horizon, dt, seed, 0)
}

/// Per-path outcome used by the estimators.
struct PathValue {
    value: f64,
    flagged: bool,
    max_intensity_dt: f64,
}

/// Runs `n_paths` paths to `horizon`, integrating `rate` along each path by
/// the trapezoid rule, and maps `(∫rate, X_T)` to a sample value.
fn run_paths<F>(
    model: &JumpDiffusionModel,
    rate: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    value: F,
) -> Result<MCEstimate>
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    check_start(model, x0)?;
    if n_paths < MIN_PATHS {
        return Err(Error::invalid(format!("need at least {MIN_PATHS} paths, got {n_paths}")));
    }
    let (steps, h) = grid(horizon, dt)?;
    let samples = (0..n_paths as u64)
        .into_par_iter()
        .map_init(
            || Stepper::new(model),
            |stepper, path| {
                stepper.flagged = false;
                stepper.max_intensity_dt = 0.0;
                let mut rng = path_rng(seed, path);
                let mut x = x0.to_vec();
                let mut r_prev = rate(&x);
                let mut integral = 0.0;
                for _ in 0..steps {
                    stepper.step(&mut x, h, &mut rng)?;
                    let r = rate(&x);
                    integral += 0.5 * h * (r_prev + r);
                    r_prev = r;
                }
                Ok(PathValue {
                    value: value(integral, &x),
                    flagged: stepper.flagged,
                    max_intensity_dt: stepper.max_intensity_dt,
                })
            },
        )
        .collect::<Result<Vec<_>>>()?;
    warn_intensity(samples.iter().fold(0.0, |m, s| m.max(s.max_intensity_dt)));
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let (mean, std_error) = mean_and_error(&values);
    Ok(MCEstimate {
        mean,
        std_error,
        n_paths,
        flagged_paths: samples.iter().filter(|s| s.flagged).count(),
    })
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

fn mean_and_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// Monte Carlo estimate of `E f(X_T)`.
pub fn mc_expectation(
    model: &JumpDiffusionModel,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<MCEstimate> {
    run_paths(model, &|_| 0.0, x0, horizon, dt, n_paths, seed, |_, x| f(x))
}

/// Monte Carlo bond price `E exp(-∫₀^T r(X_s) ds)`.
pub fn mc_bond_price(
    model: &JumpDiffusionModel,
    short_rate: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    maturity: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<MCEstimate> {
    run_paths(model, short_rate, x0, maturity, dt, n_paths, seed, |integral, _| {
        (-integral).exp()
    })
}

/// Outcome of a martingale test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    /// Estimate of `E[P(t,T) / B_t]`.
    pub discounted: MCEstimate,
    /// `P(0, T)` from the curve family.
    pub initial_price: f64,
    /// `(E[D] - P(0,T)) / SE`; zero when both the error and the difference
    /// vanish to rounding.
    pub z_score: f64,
}

impl MartingaleReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.z_score.abs() < threshold
    }
}

/// Tests whether `D(t,T) = P(t,T) / B_t` has expectation `P(0,T)`, where
/// `P(t,T) = exp(-∫₀^{T-t} G(u, X_t) du)` and `B_t = exp(∫₀^t G(0, X_s) ds)`.
#[allow(clippy::too_many_arguments)]
pub fn martingale_test(
    model: &JumpDiffusionModel,
    family: &dyn ForwardCurve,
    x0: &[f64],
    t: f64,
    maturity: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    if !(t > 0.0 && t < maturity) {
        return Err(Error::invalid(format!("need 0 < t < T, got t = {t}, T = {maturity}")));
    }
    if family.dim() != model.dim() {
        return Err(Error::invalid("model and curve family dimensions differ"));
    }
    if maturity > family.max_maturity() {
        return Err(Error::Range {
            tau: maturity,
            max: family.max_maturity(),
        });
    }
    if !family.contains(x0) {
        return Err(Error::OutOfDomain {
            what: "curve family".into(),
            point: x0.to_vec(),
        });
    }
    let remaining = maturity - t;
    let rate = |x: &[f64]| family.value(0.0, x);
    let discounted = run_paths(model, &rate, x0, t, dt, n_paths, seed, |integral, x| {
        (-(family.integral(remaining, x) + integral)).exp()
    })?;
    let initial_price = family.bond_price(maturity, x0);
    let diff = discounted.mean - initial_price;
    let z_score = if discounted.std_error > 0.0 {
        diff / discounted.std_error
    } else if diff.abs() <= 1e-12 * initial_price.abs() {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(MartingaleReport {
        discounted,
        initial_price,
        z_score,
    })
}

type Volatility = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type JumpLoading = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

/// Forward-rate dynamics `df(t,T) = α dt + σ(t,T) dB + ∫ ρ(t,T,y) μ(dt,dy)`
/// with marks compensated by `ν(dy) dt = rate · marks(dy) dt`.
#[derive(Clone)]
pub struct HjmInputs {
    pub sigma: Volatility,
    pub rho: JumpLoading,
    pub jump_rate: f64,
    pub marks: JumpMeasure,
}

impl HjmInputs {
    pub fn new(sigma: Volatility, rho: JumpLoading, jump_rate: f64, marks: JumpMeasure) -> Result<Self> {
        if !(jump_rate >= 0.0 && jump_rate.is_finite()) {
            return Err(Error::invalid(format!("jump rate must be finite and >= 0, got {jump_rate}")));
        }
        marks.validate()?;
        Ok(HjmInputs {
            sigma,
            rho,
            jump_rate,
            marks,
        })
    }
}

/// The no-arbitrage drift
/// `σ(t,T) ∫_t^T σ(t,s) ds - ∫ ρ(t,T,y) exp(-∫_t^T ρ(t,u,y) du) ν(dy)`.
pub fn hjm_drift(inputs: &HjmInputs, t: f64, maturity: f64, tol: f64) -> Result<f64> {
    if !(t <= maturity) {
        return Err(Error::invalid(format!("need t <= T, got t = {t}, T = {maturity}")));
    }
    if t == maturity {
        return Ok(0.0);
    }
    let sigma = &inputs.sigma;
    let s_t = sigma(t, maturity);
    let diffusion = if s_t == 0.0 {
        0.0
    } else {
        s_t * integrate(&|s: f64| sigma(t, s), t, maturity, tol)?.value
    };
    if inputs.jump_rate == 0.0 {
        return Ok(diffusion);
    }
    let rho = &inputs.rho;
    let inner_tol = tol * 1e-2;
    let failure = std::cell::RefCell::new(None);
    let jump = inputs.marks.expect(
        &|y| {
            let r = rho(t, maturity, y);
            if r == 0.0 {
                return 0.0;
            }
            match integrate(&|u: f64| rho(t, u, y), t, maturity, inner_tol) {
                Ok(i) => r * (-i.value).exp(),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            }
        },
        tol / inputs.jump_rate,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(diffusion - inputs.jump_rate * jump?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_lands_on_horizon() {
        let (n, h) = grid(1.0, 0.3).unwrap();
        assert_eq!(n, 4);
        assert_eq!(h, 0.25);
        assert_eq!(grid(1.0, 1e-3).unwrap().0, 1000);
        assert!(grid(0.5, 1.0).is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values.iter().copied()), 2.0);
    }
}
