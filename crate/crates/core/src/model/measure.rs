//! Jump-size distributions.

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_half_line};

/// Default absolute tolerance for expectations under a jump measure.
pub const DEFAULT_TOL: f64 = 1e-10;

/// A single point mass of a discrete jump distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Probability distribution of jump sizes, independent of the state.
///
/// `ExponentialProduct` and `GaussianDiagonal` are products of independent
/// one-dimensional marginals. An exponential coordinate with infinite rate,
/// or a Gaussian coordinate with zero standard deviation, is a point mass
/// (at zero and at the mean respectively), which lets a measure load only
/// some of the state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpMeasure {
    DiracZero { dim: usize },
    Discrete { atoms: Vec<Atom> },
    ExponentialProduct { rates: Vec<f64>, negative: Vec<bool> },
    GaussianDiagonal {
        mean: Vec<f64>,
        stddev: Vec<f64>,
        truncate: Vec<bool>,
    },
    Empirical { samples: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy)]
enum Marginal {
    Point(f64),
    Exponential { rate: f64, sign: f64 },
    Gaussian { mean: f64, sd: f64, truncated: bool, mass: f64 },
}

fn normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

impl Marginal {
    fn is_point(&self) -> bool {
        matches!(self, Marginal::Point(_))
    }

    /// Expectation of `g` under this marginal.
    fn integrate(&self, g: &dyn Fn(f64) -> f64, tol: f64) -> Result<f64> {
        match *self {
            Marginal::Point(p) => {
                let y = g(p);
                if y.is_finite() {
                    Ok(y)
                } else {
                    Err(Error::Divergent {
                        coordinate: None,
                        detail: format!("integrand is not finite at {p}"),
                    })
                }
            }
            Marginal::Exponential { rate, sign } => {
                let h = |s: f64| {
                    let d = rate * (-rate * s).exp();
                    if d == 0.0 {
                        0.0
                    } else {
                        d * g(sign * s)
                    }
                };
                Ok(integrate_half_line(&h, 0.0, 1.0 / rate, 1.0, tol)?.value)
            }
            Marginal::Gaussian {
                mean,
                sd,
                truncated,
                mass,
            } => {
                let h = |y: f64| {
                    let d = normal_pdf((y - mean) / sd) / (sd * mass);
                    if d == 0.0 {
                        0.0
                    } else {
                        d * g(y)
                    }
                };
                if !truncated {
                    let up = integrate_half_line(&h, mean, sd, 1.0, 0.5 * tol)?;
                    let down = integrate_half_line(&h, mean, sd, -1.0, 0.5 * tol)?;
                    Ok(up.value + down.value)
                } else if mean > 0.0 {
                    let body = integrate(&h, 0.0, mean, 0.5 * tol)?;
                    let tail = integrate_half_line(&h, mean, sd, 1.0, 0.5 * tol)?;
                    Ok(body.value + tail.value)
                } else {
                    Ok(integrate_half_line(&h, 0.0, sd, 1.0, tol)?.value)
                }
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Point(p) => p,
            Marginal::Exponential { rate, sign } => {
                let e: f64 = Exp1.sample(rng);
                sign * e / rate
            }
            Marginal::Gaussian {
                mean,
                sd,
                truncated,
                ..
            } => {
                if !truncated {
                    let z: f64 = StandardNormal.sample(rng);
                    return mean + sd * z;
                }
                let lower = -mean / sd;
                if lower < 0.5 {
                    loop {
                        let z: f64 = StandardNormal.sample(rng);
                        if z >= lower {
                            return mean + sd * z;
                        }
                    }
                }
                // Exponential proposal for a one-sided tail (Robert, 1995).
                let alpha = 0.5 * (lower + (lower * lower + 4.0).sqrt());
                loop {
                    let e: f64 = Exp1.sample(rng);
                    let z = lower + e / alpha;
                    let u: f64 = rng.random();
                    if u <= (-0.5 * (z - alpha) * (z - alpha)).exp() {
                        return mean + sd * z;
                    }
                }
            }
        }
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be finite")))
    }
}

impl JumpMeasure {
    pub fn dirac_zero(dim: usize) -> Self {
        JumpMeasure::DiracZero { dim }
    }

    pub fn discrete(atoms: Vec<Atom>) -> Result<Self> {
        let m = JumpMeasure::Discrete { atoms };
        m.validate()?;
        Ok(m)
    }

    /// A single jump of fixed size, taken with probability one.
    pub fn point(point: Vec<f64>) -> Self {
        JumpMeasure::Discrete {
            atoms: vec![Atom { point, weight: 1.0 }],
        }
    }

    /// Independent exponential coordinates supported on the positive half-line.
    pub fn exponential(rates: Vec<f64>) -> Result<Self> {
        let negative = vec![false; rates.len()];
        let m = JumpMeasure::ExponentialProduct { rates, negative };
        m.validate()?;
        Ok(m)
    }

    /// Exponential jumps of the given rate in coordinate `coord` only.
    pub fn exponential_in(dim: usize, coord: usize, rate: f64) -> Result<Self> {
        let mut rates = vec![f64::INFINITY; dim];
        if coord >= dim {
            return Err(Error::invalid(format!("coordinate {coord} out of range for dimension {dim}")));
        }
        rates[coord] = rate;
        Self::exponential(rates)
    }

    pub fn gaussian(mean: Vec<f64>, stddev: Vec<f64>, truncate: Vec<bool>) -> Result<Self> {
        let m = JumpMeasure::GaussianDiagonal {
            mean,
            stddev,
            truncate,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn empirical(samples: Vec<Vec<f64>>) -> Result<Self> {
        let m = JumpMeasure::Empirical { samples };
        m.validate()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        match self {
            JumpMeasure::DiracZero { dim } => *dim,
            JumpMeasure::Discrete { atoms } => atoms.first().map_or(0, |a| a.point.len()),
            JumpMeasure::ExponentialProduct { rates, .. } => rates.len(),
            JumpMeasure::GaussianDiagonal { mean, .. } => mean.len(),
            JumpMeasure::Empirical { samples } => samples.first().map_or(0, Vec::len),
        }
    }

    /// Checks the probability-measure invariants.
    pub fn validate(&self) -> Result<()> {
        match self {
            JumpMeasure::DiracZero { .. } => Ok(()),
            JumpMeasure::Discrete { atoms } => {
                let first = atoms
                    .first()
                    .ok_or_else(|| Error::invalid("discrete jump measure needs at least one atom"))?;
                let n = first.point.len();
                let mut total = 0.0;
                for atom in atoms {
                    if atom.point.len() != n {
                        return Err(Error::invalid("atoms of a discrete jump measure differ in dimension"));
                    }
                    check_finite(&atom.point, "atom locations")?;
                    if !(atom.weight > 0.0 && atom.weight <= 1.0) {
                        return Err(Error::invalid(format!("atom weight {} outside (0, 1]", atom.weight)));
                    }
                    total += atom.weight;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!("atom weights sum to {total}, not 1")));
                }
                Ok(())
            }
            JumpMeasure::ExponentialProduct { rates, negative } => {
                if rates.len() != negative.len() {
                    return Err(Error::invalid("exponential rates and sign flags differ in length"));
                }
                if let Some(r) = rates.iter().find(|r| !(**r > 0.0)) {
                    return Err(Error::invalid(format!("exponential rate {r} must be positive")));
                }
                Ok(())
            }
            JumpMeasure::GaussianDiagonal {
                mean,
                stddev,
                truncate,
            } => {
                if mean.len() != stddev.len() || mean.len() != truncate.len() {
                    return Err(Error::invalid("gaussian parameters differ in length"));
                }
                check_finite(mean, "gaussian means")?;
                for i in 0..mean.len() {
                    let sd = stddev[i];
                    if !(sd >= 0.0 && sd.is_finite()) {
                        return Err(Error::invalid(format!("standard deviation {sd} must be finite and >= 0")));
                    }
                    if truncate[i] && sd == 0.0 && mean[i] < 0.0 {
                        return Err(Error::invalid(format!(
                            "coordinate {i}: point mass at {} has no mass on the positive half-line",
                            mean[i]
                        )));
                    }
                }
                Ok(())
            }
            JumpMeasure::Empirical { samples } => {
                let first = samples
                    .first()
                    .ok_or_else(|| Error::invalid("empirical jump measure needs at least one sample"))?;
                let n = first.len();
                for s in samples {
                    if s.len() != n {
                        return Err(Error::invalid("empirical samples differ in dimension"));
                    }
                    check_finite(s, "empirical samples")?;
                }
                Ok(())
            }
        }
    }

    /// True when every jump has size zero almost surely.
    pub fn is_dirac_zero(&self) -> bool {
        match self {
            JumpMeasure::DiracZero { .. } => true,
            JumpMeasure::Discrete { atoms } => atoms.iter().all(|a| a.point.iter().all(|v| *v == 0.0)),
            JumpMeasure::Empirical { samples } => samples.iter().all(|s| s.iter().all(|v| *v == 0.0)),
            _ => self
                .marginals()
                .map(|ms| ms.iter().all(|m| matches!(m, Marginal::Point(p) if *p == 0.0)))
                .unwrap_or(false),
        }
    }

    /// True when coordinate `coord` of the jump is almost surely non-negative.
    pub fn is_nonnegative_in(&self, coord: usize) -> bool {
        match self {
            JumpMeasure::DiracZero { .. } => true,
            JumpMeasure::Discrete { atoms } => atoms.iter().all(|a| a.point[coord] >= 0.0),
            JumpMeasure::Empirical { samples } => samples.iter().all(|s| s[coord] >= 0.0),
            JumpMeasure::ExponentialProduct { rates, negative } => rates[coord].is_infinite() || !negative[coord],
            JumpMeasure::GaussianDiagonal {
                mean,
                stddev,
                truncate,
            } => truncate[coord] || (stddev[coord] == 0.0 && mean[coord] >= 0.0),
        }
    }

    fn marginals(&self) -> Option<Vec<Marginal>> {
        match self {
            JumpMeasure::ExponentialProduct { rates, negative } => Some(
                rates
                    .iter()
                    .zip(negative)
                    .map(|(&rate, &neg)| {
                        if rate.is_infinite() {
                            Marginal::Point(0.0)
                        } else {
                            Marginal::Exponential {
                                rate,
                                sign: if neg { -1.0 } else { 1.0 },
                            }
                        }
                    })
                    .collect(),
            ),
            JumpMeasure::GaussianDiagonal {
                mean,
                stddev,
                truncate,
            } => {
                let mut out = Vec::with_capacity(mean.len());
                for i in 0..mean.len() {
                    let (m, sd, t) = (mean[i], stddev[i], truncate[i]);
                    if sd == 0.0 {
                        out.push(Marginal::Point(m));
                        continue;
                    }
                    let mut marginal = Marginal::Gaussian {
                        mean: m,
                        sd,
                        truncated: t,
                        mass: 1.0,
                    };
                    if t {
                        let mass = marginal.integrate(&|_| 1.0, 1e-14).ok()?;
                        marginal = Marginal::Gaussian {
                            mean: m,
                            sd,
                            truncated: t,
                            mass,
                        };
                    }
                    out.push(marginal);
                }
                Some(out)
            }
            _ => None,
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::invalid(format!(
                "argument has dimension {len}, jump measure has dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Laplace transform `∫ exp(-<v, ξ>) Q(dξ)`.
    pub fn laplace(&self, v: &[f64]) -> Result<f64> {
        self.check_dim(v.len())?;
        let dot = |p: &[f64]| p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        match self {
            JumpMeasure::DiracZero { .. } => Ok(1.0),
            JumpMeasure::Discrete { atoms } => Ok(atoms.iter().map(|a| a.weight * (-dot(&a.point)).exp()).sum()),
            JumpMeasure::Empirical { samples } => {
                Ok(samples.iter().map(|s| (-dot(s)).exp()).sum::<f64>() / samples.len() as f64)
            }
            _ => {
                let marginals = self.marginals().ok_or_else(|| Error::invalid("bad gaussian truncation"))?;
                let mut product = 1.0;
                for (i, (m, &vi)) in marginals.iter().zip(v).enumerate() {
                    let factor = match *m {
                        Marginal::Point(p) => (-vi * p).exp(),
                        Marginal::Exponential { rate, sign } => {
                            // E exp(-v * sign * E) = rate / (rate + sign * v)
                            let denom = rate + sign * vi;
                            if denom <= 0.0 {
                                return Err(Error::Divergent {
                                    coordinate: Some(i),
                                    detail: format!(
                                        "Laplace transform of an exponential with rate {rate} needs {} > {}",
                                        if sign > 0.0 { "v" } else { "-v" },
                                        -rate
                                    ),
                                });
                            }
                            rate / denom
                        }
                        Marginal::Gaussian {
                            mean,
                            sd,
                            truncated: false,
                            ..
                        } => (-vi * mean + 0.5 * vi * vi * sd * sd).exp(),
                        truncated @ Marginal::Gaussian { .. } => truncated
                            .integrate(&|y| (-vi * y).exp(), DEFAULT_TOL)
                            .map_err(|e| tag_coordinate(e, i))?,
                    };
                    product *= factor;
                }
                Ok(product)
            }
        }
    }

    /// Expectation `∫ f dQ` to absolute tolerance `tol`.
    ///
    /// Exact for discrete and empirical measures; adaptive Gauss–Legendre
    /// over each non-degenerate coordinate of the product measures.
    pub fn expect(&self, f: &dyn Fn(&[f64]) -> f64, tol: f64) -> Result<f64> {
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
        }
        let finite = |y: f64, at: &[f64]| {
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::Divergent {
                    coordinate: None,
                    detail: format!("integrand is not finite at {at:?}"),
                })
            }
        };
        match self {
            JumpMeasure::DiracZero { dim } => {
                let zero = vec![0.0; *dim];
                finite(f(&zero), &zero)
            }
            JumpMeasure::Discrete { atoms } => {
                let mut sum = 0.0;
                for a in atoms {
                    sum += a.weight * finite(f(&a.point), &a.point)?;
                }
                Ok(sum)
            }
            JumpMeasure::Empirical { samples } => {
                let mut sum = 0.0;
                for s in samples {
                    sum += finite(f(s), s)?;
                }
                Ok(sum / samples.len() as f64)
            }
            _ => {
                let marginals = self.marginals().ok_or_else(|| Error::invalid("bad gaussian truncation"))?;
                let mut prefix = Vec::with_capacity(marginals.len());
                integrate_product(&marginals, &mut prefix, f, tol)
            }
        }
    }

    /// One draw from the measure.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }

    /// Writes one draw into `out`, which must have the measure's dimension.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            JumpMeasure::DiracZero { .. } => out.iter_mut().for_each(|v| *v = 0.0),
            JumpMeasure::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = &atoms[atoms.len() - 1];
                for a in atoms {
                    acc += a.weight;
                    if u < acc {
                        chosen = a;
                        break;
                    }
                }
                out.copy_from_slice(&chosen.point);
            }
            JumpMeasure::Empirical { samples } => {
                let i = rng.random_range(0..samples.len());
                out.copy_from_slice(&samples[i]);
            }
            JumpMeasure::ExponentialProduct { rates, negative } => {
                for i in 0..rates.len() {
                    out[i] = if rates[i].is_infinite() {
                        0.0
                    } else {
                        let e: f64 = Exp1.sample(rng);
                        let v = e / rates[i];
                        if negative[i] {
                            -v
                        } else {
                            v
                        }
                    };
                }
            }
            JumpMeasure::GaussianDiagonal {
                mean,
                stddev,
                truncate,
            } => {
                // marginal masses only matter for densities, not draws
                for i in 0..mean.len() {
                    out[i] = if stddev[i] == 0.0 {
                        mean[i]
                    } else {
                        Marginal::Gaussian {
                            mean: mean[i],
                            sd: stddev[i],
                            truncated: truncate[i],
                            mass: 1.0,
                        }
                        .sample(rng)
                    };
                }
            }
        }
    }
}

fn tag_coordinate(e: Error, coord: usize) -> Error {
    match e {
        Error::Divergent { coordinate: None, detail } => Error::Divergent {
            coordinate: Some(coord),
            detail,
        },
        other => other,
    }
}

fn integrate_product(
    marginals: &[Marginal],
    prefix: &mut Vec<f64>,
    f: &dyn Fn(&[f64]) -> f64,
    tol: f64,
) -> Result<f64> {
    let level = prefix.len();
    if level == marginals.len() {
        let y = f(prefix);
        return if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::Divergent {
                coordinate: None,
                detail: format!("integrand is not finite at {prefix:?}"),
            })
        };
    }
    let marginal = marginals[level];
    if let Marginal::Point(p) = marginal {
        prefix.push(p);
        let r = integrate_product(marginals, prefix, f, tol);
        prefix.pop();
        return r;
    }
    let deeper_active = marginals[level + 1..].iter().any(|m| !m.is_point());
    // Inner results must be much tighter than the outer segment tolerance.
    let inner_tol = if deeper_active { tol / 256.0 } else { tol };
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let base = prefix.clone();
    let inner = |s: f64| {
        let mut point = base.clone();
        point.push(s);
        match integrate_product(marginals, &mut point, f, inner_tol) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let outer = marginal.integrate(&inner, tol);
    if let Some(e) = failure.into_inner() {
        return Err(tag_coordinate(e, level));
    }
    outer.map_err(|e| tag_coordinate(e, level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn laplace_examples() {
        let q = JumpMeasure::dirac_zero(3);
        assert_eq!(q.laplace(&[1.0, -2.0, 0.5]).unwrap(), 1.0);
        let q = JumpMeasure::point(vec![1.0]);
        assert!((q.laplace(&[std::f64::consts::LN_2]).unwrap() - 0.5).abs() < 1e-15);
        let q = JumpMeasure::exponential(vec![2.0]).unwrap();
        assert!((q.laplace(&[1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn laplace_divergence_names_coordinate() {
        let q = JumpMeasure::exponential(vec![f64::INFINITY, 2.0]).unwrap();
        match q.laplace(&[0.0, -3.0]) {
            Err(Error::Divergent { coordinate, .. }) => assert_eq!(coordinate, Some(1)),
            other => panic!("expected divergence, got {other:?}"),
        }
        let q = JumpMeasure::ExponentialProduct {
            rates: vec![2.0],
            negative: vec![true],
        };
        assert!(q.laplace(&[2.5]).is_err());
        assert!((q.laplace(&[1.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn expect_examples() {
        let q = JumpMeasure::exponential(vec![2.0]).unwrap();
        assert!((q.expect(&|_| 1.0, 1e-10).unwrap() - 1.0).abs() < 1e-10);
        assert!((q.expect(&|x| x[0], 1e-10).unwrap() - 0.5).abs() < 1e-10);
        let g = JumpMeasure::gaussian(vec![0.3], vec![0.2], vec![false]).unwrap();
        assert!((g.expect(&|x| x[0] * x[0], 1e-10).unwrap() - (0.09 + 0.04)).abs() < 1e-10);
    }

    #[test]
    fn expect_divergence_is_an_error() {
        let q = JumpMeasure::exponential(vec![1.0]).unwrap();
        let r = q.expect(&|x| (2.0 * x[0]).exp(), 1e-10);
        assert!(matches!(r, Err(Error::Divergent { coordinate: Some(0), .. })), "{r:?}");
    }

    #[test]
    fn truncated_gaussian_is_normalized() {
        for mean in [-1.0, 0.0, 0.7, 5.0] {
            let q = JumpMeasure::gaussian(vec![mean], vec![0.5], vec![true]).unwrap();
            assert!((q.expect(&|_| 1.0, 1e-12).unwrap() - 1.0).abs() < 1e-10, "mean {mean}");
            assert!((q.laplace(&[0.0]).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn validation() {
        assert!(JumpMeasure::discrete(vec![
            Atom {
                point: vec![1.0],
                weight: 0.5
            },
            Atom {
                point: vec![2.0],
                weight: 0.4
            }
        ])
        .is_err());
        assert!(JumpMeasure::exponential(vec![0.0]).is_err());
        assert!(JumpMeasure::gaussian(vec![0.0], vec![-1.0], vec![false]).is_err());
        assert!(JumpMeasure::empirical(vec![]).is_err());
    }

    #[test]
    fn sampling_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = JumpMeasure::dirac_zero(2);
        assert_eq!(q.sample(&mut rng), vec![0.0, 0.0]);
        let q = JumpMeasure::point(vec![3.0, -1.0]);
        for _ in 0..10 {
            assert_eq!(q.sample(&mut rng), vec![3.0, -1.0]);
        }
    }

    #[test]
    fn truncated_sampling_stays_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = JumpMeasure::gaussian(vec![-2.0, 1.0], vec![0.5, 1.0], vec![true, true]).unwrap();
        for _ in 0..2000 {
            let s = q.sample(&mut rng);
            assert!(s[0] >= 0.0 && s[1] >= 0.0);
        }
    }
}
