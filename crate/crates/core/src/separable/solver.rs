use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use super::basis::StateBasis;
use super::family::{LoadingValues, Loadings};
use super::gre::GreSystem;
use crate::error::{Error, Result};
use crate::output::write_csv;

/// `|H|` beyond which a solution is declared to have exploded.
pub const BLOW_UP: f64 = 1e8;
const MAX_STEPS: usize = 1_000_000;
const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

// Dormand–Prince 5(4) tableau; the last row doubles as the fifth-order weights
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Counters and error estimates of one solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    /// Largest embedded local error estimate over accepted steps.
    pub max_local_error: f64,
}

/// Solved loadings `H_k` on a maturity grid with quintic Hermite dense
/// output from `H`, `h = R(H)` and `h' = DR(H)·h` at the nodes.
#[derive(Debug, Clone)]
pub struct HPath {
    dim: usize,
    basis: Vec<StateBasis>,
    taus: Vec<f64>,
    big: Vec<DVector<f64>>,
    value: Vec<DVector<f64>>,
    slope: Vec<DVector<f64>>,
    offset: DVector<f64>,
    diagnostics: SolverDiagnostics,
}

struct Stepper<'a> {
    system: &'a GreSystem,
    quad_tol: f64,
    evaluations: usize,
}

impl Stepper<'_> {
    fn rhs(&mut self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.evaluations += 1;
        self.system.rhs(v, self.quad_tol)
    }

    /// One Dormand–Prince step; returns the new state, its derivative and
    /// the error estimate.
    fn step(
        &mut self,
        y: &DVector<f64>,
        k1: &DVector<f64>,
        h: f64,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        k.push(k1.clone());
        let mut arg = y.clone();
        for row in &A[1..] {
            arg = y.clone();
            for (kj, a) in k.iter().zip(row) {
                if *a != 0.0 {
                    arg.axpy(h * a, kj, 1.0);
                }
            }
            k.push(self.rhs(&arg)?);
        }
        let mut err = DVector::zeros(y.len());
        for (kj, e) in k.iter().zip(E) {
            if e != 0.0 {
                err.axpy(h * e, kj, 1.0);
            }
        }
        let f_new = k.pop().expect("seven stages");
        Ok((arg, f_new, err))
    }
}

fn check_growth(y: &DVector<f64>, tau: f64) -> Result<()> {
    if y.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
        return Err(Error::Explosion { tau });
    }
    Ok(())
}

fn check_args(tau_max: f64) -> Result<()> {
    if !(tau_max > 0.0 && tau_max.is_finite()) {
        return Err(Error::invalid(format!("tau_max must be positive, got {tau_max}")));
    }
    Ok(())
}

struct Nodes {
    taus: Vec<f64>,
    big: Vec<DVector<f64>>,
    value: Vec<DVector<f64>>,
}

impl HPath {
    fn assemble(system: &GreSystem, nodes: Nodes, quad_tol: f64, diagnostics: SolverDiagnostics) -> Result<Self> {
        let slope = nodes
            .big
            .iter()
            .zip(&nodes.value)
            .map(|(v, w)| system.directional(v, w, quad_tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(HPath {
            dim: system.dim(),
            basis: system.basis().to_vec(),
            taus: nodes.taus,
            big: nodes.big,
            value: nodes.value,
            slope,
            offset: DVector::zeros(system.len()),
            diagnostics,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &[StateBasis] {
        &self.basis
    }

    pub fn nodes(&self) -> &[f64] {
        &self.taus
    }

    pub fn tau_max(&self) -> f64 {
        *self.taus.last().expect("a path has at least two nodes")
    }

    pub fn diagnostics(&self) -> &SolverDiagnostics {
        &self.diagnostics
    }

    /// Copy whose `H_k` is shifted by `delta` while `h` is kept, used to
    /// probe the sensitivity of the integrated condition.
    pub fn with_offset(&self, k: usize, delta: f64) -> Self {
        let mut path = self.clone();
        path.offset[k] += delta;
        path
    }

    /// Loadings at `τ`, or a range error outside `[0, tau_max]`.
    pub fn eval(&self, tau: f64) -> Result<LoadingValues> {
        if !(tau >= 0.0 && tau <= self.tau_max()) {
            return Err(Error::Range {
                tau,
                max: self.tau_max(),
            });
        }
        Ok(self.interpolate(tau))
    }

    fn interpolate(&self, tau: f64) -> LoadingValues {
        let i = self.taus.partition_point(|&t| t <= tau);
        if i > 0 && self.taus[i - 1] == tau {
            let j = i - 1;
            return LoadingValues {
                big: &self.big[j] + &self.offset,
                value: self.value[j].clone(),
                slope: self.slope[j].clone(),
            };
        }
        let j = i.clamp(1, self.taus.len() - 1) - 1;
        let (t0, t1) = (self.taus[j], self.taus[j + 1]);
        let dt = t1 - t0;
        let s = (tau - t0) / dt;
        let w = quintic_weights(s);
        let m = self.offset.len();
        let mut out = LoadingValues {
            big: self.offset.clone(),
            value: DVector::zeros(m),
            slope: DVector::zeros(m),
        };
        let data = [
            (&self.big[j], 1.0),
            (&self.value[j], dt),
            (&self.slope[j], dt * dt),
            (&self.slope[j + 1], dt * dt),
            (&self.value[j + 1], dt),
            (&self.big[j + 1], 1.0),
        ];
        for (b, (node, scale)) in data.iter().enumerate() {
            out.big.axpy(scale * w[0][b], node, 1.0);
            out.value.axpy(scale * w[1][b] / dt, node, 1.0);
            out.slope.axpy(scale * w[2][b] / (dt * dt), node, 1.0);
        }
        out
    }

    /// CSV with columns `tau, H_0…, h_0…` at the given maturities.
    pub fn write_csv<W: Write>(&self, out: W, taus: &[f64]) -> Result<()> {
        let m = self.offset.len();
        let mut header = vec!["tau".to_string()];
        header.extend((0..m).map(|k| format!("H_{k}")));
        header.extend((0..m).map(|k| format!("h_{k}")));
        let rows = taus
            .iter()
            .map(|&t| {
                let l = self.eval(t)?;
                let mut row = vec![t];
                row.extend(l.big.iter());
                row.extend(l.value.iter());
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        write_csv(out, &header, rows)
    }
}

impl Loadings for HPath {
    fn len(&self) -> usize {
        self.offset.len()
    }

    fn max_maturity(&self) -> f64 {
        self.tau_max()
    }

    fn at(&self, tau: f64) -> LoadingValues {
        self.interpolate(tau.clamp(0.0, self.tau_max()))
    }
}

/// Quintic Hermite basis on `[0, 1]` and its first two derivatives, in the
/// order `y0, y0', y0'', y1'', y1', y1`.
fn quintic_weights(s: f64) -> [[f64; 6]; 3] {
    const P: [[f64; 6]; 6] = [
        [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
        [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
        [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
        [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
        [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
        [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
    ];
    let mut out = [[0.0; 6]; 3];
    for (b, c) in P.iter().enumerate() {
        let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for p in (0..6).rev() {
            v = v * s + c[p];
            if p >= 1 {
                d1 = d1 * s + p as f64 * c[p];
            }
            if p >= 2 {
                d2 = d2 * s + (p * (p - 1)) as f64 * c[p];
            }
        }
        out[0][b] = v;
        out[1][b] = d1;
        out[2][b] = d2;
    }
    out
}

/// Solves `H' = R(H)`, `H(0) = 0` on `[0, tau_max]` with adaptive
/// Dormand–Prince steps. A step is accepted when every component's local
/// error estimate is at most `max(abs_tol, rel_tol·|H|)`. Jump functionals
/// are integrated to `abs_tol / 10`.
pub fn solve_gre(system: &GreSystem, tau_max: f64, rel_tol: f64, abs_tol: f64) -> Result<HPath> {
    check_args(tau_max)?;
    if !(rel_tol > 0.0 && abs_tol > 0.0) {
        return Err(Error::invalid("tolerances must be positive"));
    }
    let quad_tol = abs_tol / 10.0;
    let m = system.len();
    let mut stepper = Stepper {
        system,
        quad_tol,
        evaluations: 0,
    };
    let mut diag = SolverDiagnostics::default();
    let mut tau = 0.0;
    let mut y = DVector::zeros(m);
    let mut f = stepper.rhs(&y)?;
    let mut nodes = Nodes {
        taus: vec![0.0],
        big: vec![y.clone()],
        value: vec![f.clone()],
    };
    let scale0 = abs_tol.max(rel_tol * y.amax());
    let d1 = f.amax() / scale0;
    let mut h = if d1 > 1e-5 { (0.01 / d1).max(1e-8) } else { 1e-3 };
    h = h.min(tau_max);
    let mut rejected_last = false;
    while tau < tau_max {
        if diag.accepted_steps + diag.rejected_steps >= MAX_STEPS || h < 1e-14 * tau.max(1.0) {
            return Err(Error::Explosion { tau });
        }
        let last = tau + h >= tau_max;
        let step = if last { tau_max - tau } else { h };
        let (y_new, f_new, err) = stepper.step(&y, &f, step)?;
        let mut ratio: f64 = 0.0;
        for i in 0..m {
            let scale = abs_tol.max(rel_tol * y[i].abs().max(y_new[i].abs()));
            ratio = ratio.max(err[i].abs() / scale);
        }
        if !ratio.is_finite() {
            check_growth(&y_new, tau + step)?;
            h = step * MIN_FACTOR;
            diag.rejected_steps += 1;
            rejected_last = true;
            continue;
        }
        if ratio <= 1.0 {
            tau = if last { tau_max } else { tau + step };
            check_growth(&y_new, tau)?;
            diag.accepted_steps += 1;
            diag.max_local_error = diag.max_local_error.max(err.amax());
            y = y_new;
            f = f_new;
            nodes.taus.push(tau);
            nodes.big.push(y.clone());
            nodes.value.push(f.clone());
            let mut factor = (SAFETY * ratio.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR);
            if rejected_last {
                factor = factor.min(1.0);
            }
            rejected_last = false;
            h = step * factor;
        } else {
            diag.rejected_steps += 1;
            rejected_last = true;
            h = step * (SAFETY * ratio.powf(-0.2)).max(MIN_FACTOR);
        }
    }
    diag.rhs_evaluations = stepper.evaluations;
    HPath::assemble(system, nodes, quad_tol, diag)
}

/// Fixed-step Dormand–Prince solve with `steps` equal steps, for
/// convergence studies. Jump functionals are integrated to `quad_tol`.
pub fn solve_gre_fixed(system: &GreSystem, tau_max: f64, steps: usize, quad_tol: f64) -> Result<HPath> {
    check_args(tau_max)?;
    if steps == 0 {
        return Err(Error::invalid("at least one step is needed"));
    }
    let m = system.len();
    let mut stepper = Stepper {
        system,
        quad_tol,
        evaluations: 0,
    };
    let h = tau_max / steps as f64;
    let mut y = DVector::zeros(m);
    let mut f = stepper.rhs(&y)?;
    let mut nodes = Nodes {
        taus: vec![0.0],
        big: vec![y.clone()],
        value: vec![f.clone()],
    };
    let mut diag = SolverDiagnostics::default();
    for s in 1..=steps {
        let (y_new, f_new, err) = stepper.step(&y, &f, h)?;
        let tau = if s == steps { tau_max } else { h * s as f64 };
        check_growth(&y_new, tau)?;
        diag.accepted_steps += 1;
        diag.max_local_error = diag.max_local_error.max(err.amax());
        y = y_new;
        f = f_new;
        nodes.taus.push(tau);
        nodes.big.push(y.clone());
        nodes.value.push(f.clone());
    }
    diag.rhs_evaluations = stepper.evaluations;
    HPath::assemble(system, nodes, quad_tol, diag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quintic_basis_reproduces_quintics() {
        // y(s) = s^5 - 2 s^3 + s
        let y = |s: f64| s.powi(5) - 2.0 * s.powi(3) + s;
        let d1 = |s: f64| 5.0 * s.powi(4) - 6.0 * s * s + 1.0;
        let d2 = |s: f64| 20.0 * s.powi(3) - 12.0 * s;
        let nodes = [y(0.0), d1(0.0), d2(0.0), d2(1.0), d1(1.0), y(1.0)];
        for s in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let w = quintic_weights(s);
            let v: f64 = (0..6).map(|b| w[0][b] * nodes[b]).sum();
            let dv: f64 = (0..6).map(|b| w[1][b] * nodes[b]).sum();
            let ddv: f64 = (0..6).map(|b| w[2][b] * nodes[b]).sum();
            assert!((v - y(s)).abs() < 1e-14);
            assert!((dv - d1(s)).abs() < 1e-13);
            assert!((ddv - d2(s)).abs() < 1e-12);
        }
    }
}
