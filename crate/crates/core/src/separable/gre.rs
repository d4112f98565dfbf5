use nalgebra::{DMatrix, DVector};

use super::basis::StateBasis;
use super::family::check_basis;
use crate::error::{Error, Result};
use crate::model::{JumpDiffusionModel, JumpMeasure};

/// Condition number above which an anchor matrix is rejected.
pub const ANCHOR_CONDITION_LIMIT: f64 = 1e10;
/// Quasi-random candidates per basis function considered for anchors.
const ANCHOR_CANDIDATES: usize = 64;

/// One jump functional `v ↦ Ψ(v, x)` weighted into every component.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpTerm {
    /// Weight of this functional in each `R_k`.
    pub weights: DVector<f64>,
    /// State at which the increment `φ(x+ξ) - φ(x)` is formed; `None` for
    /// the affine increment `(0, ξ)`, which uses the Laplace transform.
    pub anchor: Option<Vec<f64>>,
}

/// Right-hand sides of the generalized Riccati equations `H' = R(H)`:
///
/// ```text
/// R_k(v) = θ_k + ⟨β_k, v⟩ + vᵀ Q_k v + Σ_terms w_k Ψ_term(v)
/// ```
///
/// The quadratic matrices `Q_k` are stored with their sign, so the form
/// `-⟨α_k v, v⟩` corresponds to `Q_k = -α_k`.
#[derive(Debug, Clone)]
pub struct GreSystem {
    dim: usize,
    basis: Vec<StateBasis>,
    theta: DVector<f64>,
    beta: DMatrix<f64>,
    quadratic: Vec<DMatrix<f64>>,
    jumps: JumpMeasure,
    jump_terms: Vec<JumpTerm>,
}

impl GreSystem {
    /// Assembles a system; `beta` holds `β_k` in row `k` and each quadratic
    /// matrix is symmetrized.
    pub fn new(
        dim: usize,
        basis: Vec<StateBasis>,
        theta: Vec<f64>,
        beta: DMatrix<f64>,
        quadratic: Vec<DMatrix<f64>>,
        jumps: JumpMeasure,
        jump_terms: Vec<JumpTerm>,
    ) -> Result<Self> {
        check_basis(dim, &basis)?;
        let m = basis.len();
        if theta.len() != m || beta.shape() != (m, m) || quadratic.len() != m {
            return Err(Error::invalid(format!("Riccati system needs {m} components throughout")));
        }
        if quadratic.iter().any(|q| q.shape() != (m, m)) {
            return Err(Error::invalid("quadratic matrices must be m x m"));
        }
        if jump_terms
            .iter()
            .any(|t| t.weights.len() != m || t.anchor.as_ref().is_some_and(|a| a.len() != dim))
        {
            return Err(Error::invalid("jump term has the wrong shape"));
        }
        if jump_terms.iter().any(|t| t.anchor.is_none()) && !StateBasis::is_affine(&basis, dim) {
            return Err(Error::invalid("affine jump increments need the affine basis"));
        }
        if jumps.dim() != dim {
            return Err(Error::invalid("jump measure and state dimensions differ"));
        }
        let values = theta.iter().chain(beta.iter()).chain(quadratic.iter().flat_map(|q| q.iter()));
        if values.chain(jump_terms.iter().flat_map(|t| t.weights.iter())).any(|v| !v.is_finite()) {
            return Err(Error::invalid("Riccati coefficients must be finite"));
        }
        let quadratic = quadratic.into_iter().map(|q| (&q + q.transpose()) * 0.5).collect();
        let jump_terms = if jumps.is_dirac_zero() {
            Vec::new()
        } else {
            jump_terms.into_iter().filter(|t| t.weights.iter().any(|w| *w != 0.0)).collect()
        };
        Ok(GreSystem {
            dim,
            basis,
            theta: DVector::from_vec(theta),
            beta,
            quadratic,
            jumps,
            jump_terms,
        })
    }

    /// Number of components `m`.
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &[StateBasis] {
        &self.basis
    }

    pub fn jumps(&self) -> &JumpMeasure {
        &self.jumps
    }

    pub fn jump_terms(&self) -> &[JumpTerm] {
        &self.jump_terms
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    /// `β_k`
    pub fn beta(&self, k: usize) -> DVector<f64> {
        self.beta.row(k).transpose()
    }

    /// Signed quadratic matrix `Q_k`.
    pub fn quadratic(&self, k: usize) -> &DMatrix<f64> {
        &self.quadratic[k]
    }

    /// `α_k = -Q_k`, the matrix of the `-⟨α_k v, v⟩` form.
    pub fn alpha(&self, k: usize) -> DMatrix<f64> {
        -&self.quadratic[k]
    }

    fn psi(&self, term: &JumpTerm, v: &DVector<f64>, tol: f64) -> Result<f64> {
        match &term.anchor {
            None => Ok(1.0 - self.jumps.laplace(&v.as_slice()[1..])?),
            Some(x) => super::family::psi_separable(&self.basis, &self.jumps, v.as_slice(), x, tol),
        }
    }

    /// Derivative of `Ψ_term` at `v` in the direction `w`.
    fn psi_directional(&self, term: &JumpTerm, v: &DVector<f64>, w: &DVector<f64>, tol: f64) -> Result<f64> {
        match &term.anchor {
            None => self.jumps.expect(
                &|xi| {
                    let (mut vw, mut vx) = (0.0, 0.0);
                    for (i, s) in xi.iter().enumerate() {
                        vw += w[i + 1] * s;
                        vx += v[i + 1] * s;
                    }
                    vw * (-vx).exp()
                },
                tol,
            ),
            Some(x) => self.jumps.expect(
                &|xi| {
                    let y: Vec<f64> = x.iter().zip(xi).map(|(a, b)| a + b).collect();
                    let (mut vw, mut vx) = (0.0, 0.0);
                    for (k, b) in self.basis.iter().enumerate() {
                        let d = b.increment(x, &y);
                        vw += w[k] * d;
                        vx += v[k] * d;
                    }
                    vw * (-vx).exp()
                },
                tol,
            ),
        }
    }

    /// `R(v)`; jump functionals are integrated to `tol`.
    pub fn rhs(&self, v: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        let mut out = &self.theta + &self.beta * v;
        for (k, q) in self.quadratic.iter().enumerate() {
            out[k] += v.dot(&(q * v));
        }
        for term in &self.jump_terms {
            out.axpy(self.psi(term, v, tol)?, &term.weights, 1.0);
        }
        Ok(out)
    }

    /// `DR(v) · w`
    pub fn directional(&self, v: &DVector<f64>, w: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        let mut out = &self.beta * w;
        for (k, q) in self.quadratic.iter().enumerate() {
            out[k] += 2.0 * v.dot(&(q * w));
        }
        for term in &self.jump_terms {
            out.axpy(self.psi_directional(term, v, w, tol)?, &term.weights, 1.0);
        }
        Ok(out)
    }
}

/// Riccati system of an affine model for the basis `(1, x_1, …, x_n)`,
/// read off the affine parts of the drift, covariance and intensity.
/// `theta` holds `h_k(0)`, starting with the constant component.
pub fn build_gre(model: &JumpDiffusionModel, theta: &[f64]) -> Result<GreSystem> {
    let n = model.dim();
    let m = n + 1;
    if theta.len() != m {
        return Err(Error::invalid(format!("affine system needs {m} initial values, got {}", theta.len())));
    }
    let coeffs = model.affine_coefficients()?;
    let mut beta = DMatrix::zeros(m, m);
    for i in 0..n {
        beta[(0, i + 1)] = coeffs.drift.constant[i];
        for k in 0..n {
            beta[(k + 1, i + 1)] = coeffs.drift.linear[(i, k)];
        }
    }
    let mut quadratic = vec![DMatrix::zeros(m, m); m];
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            quadratic[0][(i + 1, j + 1)] = -coeffs.covariance.constant[row];
            for k in 0..n {
                quadratic[k + 1][(i + 1, j + 1)] = -coeffs.covariance.linear[(row, k)];
            }
        }
    }
    let weights = DVector::from_fn(m, |k, _| {
        if k == 0 {
            coeffs.intensity.constant[0]
        } else {
            coeffs.intensity.linear[(0, k - 1)]
        }
    });
    GreSystem::new(
        n,
        StateBasis::affine(n),
        theta.to_vec(),
        beta,
        quadratic,
        model.jumps().clone(),
        vec![JumpTerm {
            weights,
            anchor: None,
        }],
    )
}

fn basis_matrix(basis: &[StateBasis], anchors: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(anchors.len(), basis.len(), |l, k| basis[k].value(&anchors[l]))
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let smin = sv.min();
    if smin == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / smin
    }
}

/// Greedy anchor choice among quasi-random points of the model's domain:
/// each step adds the candidate that maximizes the smallest singular value
/// of the basis matrix built so far.
pub fn select_anchors(model: &JumpDiffusionModel, basis: &[StateBasis]) -> Result<Vec<Vec<f64>>> {
    let m = basis.len();
    let candidates = model.domain().probe_points(ANCHOR_CANDIDATES * m);
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut used = vec![false; candidates.len()];
    for _ in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for (c, x) in candidates.iter().enumerate() {
            if used[c] {
                continue;
            }
            chosen.push(x.clone());
            let smin = basis_matrix(basis, &chosen).singular_values().min();
            chosen.pop();
            if best.is_none_or(|(_, s)| smin > s) {
                best = Some((c, smin));
            }
        }
        let (c, _) = best.ok_or(Error::AnchorSelection {
            condition: f64::INFINITY,
        })?;
        used[c] = true;
        chosen.push(candidates[c].clone());
    }
    Ok(chosen)
}

/// Riccati system of a separable family with the given basis for `model`,
/// obtained by evaluating the integrated consistency condition at `m`
/// anchor states and inverting the basis matrix. Anchors are chosen
/// automatically when `anchors` is `None`.
pub fn build_ode_system(
    basis: &[StateBasis],
    theta: &[f64],
    model: &JumpDiffusionModel,
    anchors: Option<Vec<Vec<f64>>>,
) -> Result<GreSystem> {
    let n = model.dim();
    check_basis(n, basis)?;
    let m = basis.len();
    if theta.len() != m {
        return Err(Error::invalid(format!("{m} basis functions but {} initial values", theta.len())));
    }
    let anchors = match anchors {
        Some(a) => a,
        None => select_anchors(model, basis)?,
    };
    if anchors.len() != m || anchors.iter().any(|a| a.len() != n) {
        return Err(Error::invalid(format!("need {m} anchor states of dimension {n}")));
    }
    if let Some(x) = anchors.iter().find(|x| !model.domain().contains(x)) {
        return Err(Error::OutOfDomain {
            what: "model".into(),
            point: x.clone(),
        });
    }
    let phi = basis_matrix(basis, &anchors);
    let cond = condition(&phi);
    if !(cond < ANCHOR_CONDITION_LIMIT) {
        return Err(Error::AnchorSelection { condition: cond });
    }
    let inverse = phi
        .try_inverse()
        .ok_or(Error::AnchorSelection {
            condition: f64::INFINITY,
        })?;

    let mut beta = DMatrix::zeros(m, m);
    let mut quadratic = vec![DMatrix::zeros(m, m); m];
    let mut jump_terms = Vec::new();
    for (l, x) in anchors.iter().enumerate() {
        let b = model.drift_at(x);
        let a = model.covariance_at(x);
        let grads: Vec<DVector<f64>> = basis.iter().map(|f| f.gradient(x)).collect();
        // B_k(x) and A_kl(x) at this anchor
        let big_b = DVector::from_fn(m, |k, _| grads[k].dot(&b) + a.component_mul(&basis[k].hessian(x)).sum());
        let big_a = DMatrix::from_fn(m, m, |k, j| grads[k].dot(&(&a * &grads[j])));
        for k in 0..m {
            let w = inverse[(k, l)];
            if w == 0.0 {
                continue;
            }
            let mut row = beta.row_mut(k);
            row += big_b.transpose() * w;
            quadratic[k] -= &big_a * w;
        }
        let intensity = model.intensity_at(x);
        if intensity != 0.0 {
            jump_terms.push(JumpTerm {
                weights: inverse.column(l) * intensity,
                anchor: Some(x.clone()),
            });
        }
    }
    GreSystem::new(
        n,
        basis.to_vec(),
        theta.to_vec(),
        beta,
        quadratic,
        model.jumps().clone(),
        jump_terms,
    )
}
