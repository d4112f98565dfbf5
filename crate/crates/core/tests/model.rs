use jumpcons::model::{Atom, CoefficientFunction, DomainBox, JumpDiffusionModel, JumpMeasure};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn variants() -> Vec<JumpMeasure> {
    vec![
        JumpMeasure::dirac_zero(2),
        JumpMeasure::point(vec![0.1, -0.2]),
        JumpMeasure::discrete(vec![
            Atom { point: vec![0.1, 0.0], weight: 0.3 },
            Atom { point: vec![-0.05, 0.2], weight: 0.7 },
        ])
        .unwrap(),
        JumpMeasure::exponential(vec![4.0, 9.0]).unwrap(),
        JumpMeasure::gaussian(vec![0.05, -0.1], vec![0.1, 0.2], vec![false, false]).unwrap(),
        JumpMeasure::gaussian(vec![0.05, 0.1], vec![0.1, 0.2], vec![true, false]).unwrap(),
        JumpMeasure::empirical(vec![vec![0.1, 0.2], vec![0.0, -0.1], vec![0.3, 0.3]]).unwrap(),
    ]
}

#[test]
fn laplace_at_zero_is_one() {
    for q in variants() {
        assert!((q.laplace(&[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-10, "{q:?}");
    }
}

#[test]
fn empirical_sample_reproduces_exponential_laplace() {
    let q = JumpMeasure::exponential(vec![2.0, 5.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 1_000_000;
    let samples: Vec<Vec<f64>> = (0..n).map(|_| q.sample(&mut rng)).collect();
    let values: Vec<f64> = samples.iter().map(|s| (-(s[0] + s[1])).exp()).collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let empirical = JumpMeasure::empirical(samples).unwrap();
    let exact = q.laplace(&[1.0, 1.0]).unwrap();
    assert!((exact - 2.0 / 3.0 * 5.0 / 6.0).abs() < 1e-12);
    assert!((empirical.laplace(&[1.0, 1.0]).unwrap() - exact).abs() < 4.0 * se);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn expect_of_exponential_weight_is_laplace(v0 in -1.5f64..3.0, v1 in -1.5f64..3.0) {
        let tol = 1e-10;
        for q in variants() {
            let laplace = q.laplace(&[v0, v1]).unwrap();
            let expect = q.expect(&|xi| (-(v0 * xi[0] + v1 * xi[1])).exp(), tol).unwrap();
            prop_assert!((laplace - expect).abs() <= 2.0 * tol, "{:?}: {} vs {}", q, laplace, expect);
        }
    }

    #[test]
    fn validated_models_have_psd_covariance(
        c in prop::collection::vec(-1.0f64..1.0, 8),
        l0 in 0.0f64..2.0,
        l1 in prop::collection::vec(0.0f64..1.0, 2),
    ) {
        let domain = DomainBox::new(vec![0.0, 0.0], vec![f64::INFINITY, 2.0]).unwrap();
        // c(x) = C₀ + x₁ C₁, intensity affine and non-negative on the box
        let diffusion = CoefficientFunction::callable(2, 4, move |x, out| {
            for k in 0..4 {
                out[k] = c[k] + x[0] * c[4 + k];
            }
        });
        let intensity = CoefficientFunction::affine(vec![l0], DMatrix::from_row_slice(1, 2, &l1)).unwrap();
        let model = JumpDiffusionModel::new(
            domain.clone(),
            CoefficientFunction::zero(2, 2),
            diffusion,
            intensity,
            JumpMeasure::exponential(vec![3.0, 3.0]).unwrap(),
        )
        .unwrap();
        for x in domain.probe_points(100) {
            let eig = SymmetricEigen::new(model.covariance_at(&x)).eigenvalues;
            prop_assert!(eig.min() >= -1e-10);
            prop_assert!(model.intensity_at(&x) >= 0.0);
        }
    }
}
