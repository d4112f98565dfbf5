//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use jumpcons::consistency::{consistency_residual, recover_coefficients, DEFAULT_TAU_GRID, DEFAULT_X_POINTS};
use jumpcons::curve::{ForwardCurve, NumericCurve};
use jumpcons::model::{CoefficientFunction, DomainBox, JumpDiffusionModel, JumpMeasure};
use jumpcons::nelson_siegel::*;
use jumpcons::presets::{self, SHORT_RATE_THETA};
use jumpcons::quadrature::integrate;
use jumpcons::separable::{build_gre, solve_gre, HPath, SeparableFamily};
use jumpcons::simulate::{hjm_drift, martingale_test, mc_bond_price, simulate_state, HjmInputs};
use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KAPPA: f64 = 0.5;
const MU: f64 = 0.04;
const SIGMA: f64 = 0.02;
const X0: f64 = 0.03;
const SEEDS: [u64; 3] = [1, 2, 3];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn solved(model: &JumpDiffusionModel, tau_max: f64) -> HPath {
    solve_gre(&build_gre(model, &SHORT_RATE_THETA).unwrap(), tau_max, 1e-10, 1e-12).unwrap()
}

fn vasicek() -> JumpDiffusionModel {
    presets::vasicek(KAPPA, MU, SIGMA).unwrap()
}

fn gre_closed_form() -> Outcome {
    let start = Instant::now();
    let path = solved(&vasicek(), 30.0);
    let elapsed = start.elapsed().as_secs_f64();
    let err = (0..=3000)
        .map(|k| {
            let tau = 0.01 * k as f64;
            (path.eval(tau).unwrap().big[1] - (1.0 - (-KAPPA * tau).exp()) / KAPPA).abs()
        })
        .fold(0.0, f64::max);
    check(err < 1e-8 && elapsed < 1.0, format!("max |H1 - closed form| = {err:.2e}, solve {elapsed:.3} s"))
}

fn pure_jump_closed_form() -> Outcome {
    let (lambda0, theta) = (0.4, 3.0);
    let closed = |tau: f64| lambda0 * (tau - theta * (1.0 + tau / theta).ln());
    let oracle_err = [0.5, 4.0, 25.0]
        .iter()
        .map(|&tau| {
            let q = integrate(&|u: f64| lambda0 * (1.0 - theta / (theta + u)), 0.0, tau, 1e-13).unwrap();
            (q.value - closed(tau)).abs()
        })
        .fold(0.0, f64::max);
    let path = solved(&presets::pure_jump(lambda0, theta).unwrap(), 30.0);
    let err = (0..=300)
        .map(|k| {
            let tau = 0.1 * k as f64;
            (path.eval(tau).unwrap().big[0] - closed(tau)).abs()
        })
        .fold(0.0, f64::max);
    check(
        oracle_err < 1e-12 && err < 1e-8,
        format!("oracle vs quadrature {oracle_err:.2e}, max |H0 - closed form| = {err:.2e}"),
    )
}

fn consistency_round_trip() -> Outcome {
    let cases = [
        ("vasicek", vasicek()),
        ("cir-like", presets::cir(KAPPA, MU, 0.1).unwrap()),
        ("jump-vasicek", presets::jump_vasicek(KAPPA, MU, SIGMA, 0.3, 50.0).unwrap()),
    ];
    let mut worst = Vec::new();
    for (name, model) in &cases {
        let family = SeparableFamily::from_path(solved(model, 30.0));
        let mut max = 0.0f64;
        for x in model.domain().probe_points(DEFAULT_X_POINTS) {
            for &tau in &DEFAULT_TAU_GRID {
                let r = consistency_residual(model, &family, &x, tau, 1e-12).map_err(|e| format!("{name}: {e}"))?;
                max = max.max(r.value.abs());
            }
        }
        worst.push((name, max));
    }
    let ok = worst.iter().all(|(_, m)| *m < 1e-6);
    let detail = worst.iter().map(|(n, m)| format!("{n} {m:.2e}")).collect::<Vec<_>>().join(", ");
    check(ok, format!("max residual: {detail}"))
}

fn recovery_round_trip() -> Outcome {
    let taus = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0];
    let probe = JumpMeasure::exponential(vec![10.0]).unwrap();
    let model = vasicek();
    let family = SeparableFamily::from_path(solved(&model, 20.0));
    let rec = recover_coefficients(&family, &probe, &[X0], &taus, 1e-12).map_err(|e| e.to_string())?;
    let diff_err = (rec.b[0] - KAPPA * (MU - X0)).abs().max((rec.a[(0, 0)] - SIGMA * SIGMA / 2.0).abs()).max(rec.lambda.abs());

    let jumpy = presets::jump_vasicek(KAPPA, MU, SIGMA, 0.3, 50.0).unwrap();
    let family = SeparableFamily::from_path(solved(&jumpy, 20.0));
    let mut jump_err = 0.0f64;
    for x in [0.01, 0.03, 0.08] {
        let rec = recover_coefficients(&family, jumpy.jumps(), &[x], &taus, 1e-12).map_err(|e| e.to_string())?;
        jump_err = jump_err
            .max((rec.lambda - 0.3).abs())
            .max((rec.b[0] - KAPPA * (MU - x)).abs())
            .max((rec.a[(0, 0)] - SIGMA * SIGMA / 2.0).abs());
    }

    let flat = NumericCurve::new(1, |_tau, x| x[0]);
    let flagged = recover_coefficients(&flat, &JumpMeasure::dirac_zero(1), &[0.05], &taus, 1e-12)
        .map_err(|e| e.to_string())?
        .rank_deficient;
    check(
        diff_err < 1e-6 && jump_err < 1e-4 && flagged && !rec.rank_deficient,
        format!("diffusion-only error {diff_err:.2e}, with jumps {jump_err:.2e}, flat curve flagged: {flagged}"),
    )
}

/// Runs `estimate` for up to three seeds and passes on the first `|z| < 3`.
fn with_retry(mut estimate: impl FnMut(u64) -> Result<f64, String>) -> Result<(bool, Vec<f64>), String> {
    let mut zs = Vec::new();
    for seed in SEEDS {
        let z = estimate(seed)?;
        zs.push(z);
        if z.abs() < 3.0 {
            return Ok((true, zs));
        }
    }
    Ok((false, zs))
}

fn monte_carlo_agreement() -> Outcome {
    let cases = [("vasicek", vasicek()), ("jump-vasicek", presets::jump_vasicek(KAPPA, MU, SIGMA, 0.3, 50.0).unwrap())];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, model) in &cases {
        let start = Instant::now();
        let price = SeparableFamily::from_path(solved(model, 5.0)).bond_price(5.0, &[X0]);
        let (passed, zs) = with_retry(|seed| {
            let est = mc_bond_price(model, &|x| x[0], &[X0], 5.0, 1e-3, 100_000, seed).map_err(|e| e.to_string())?;
            Ok((est.mean - price) / est.std_error)
        })?;
        let elapsed = start.elapsed().as_secs_f64() / zs.len() as f64;
        ok &= passed && elapsed < 60.0;
        parts.push(format!("{name} z = {:?} ({elapsed:.1} s per run)", zs.iter().map(|z| (z * 100.0).round() / 100.0).collect::<Vec<_>>()));
    }
    check(ok, parts.join("; "))
}

fn martingale_discrimination() -> Outcome {
    let model = vasicek();
    let family = SeparableFamily::from_path(solved(&model, 5.0));
    let (passed, zs) = with_retry(|seed| {
        martingale_test(&model, &family, &[X0], 1.0, 5.0, 1e-3, 100_000, seed)
            .map(|r| r.z_score)
            .map_err(|e| e.to_string())
    })?;
    let shifted = model
        .with_drift(CoefficientFunction::callable(1, 1, |x, out| out[0] = KAPPA * (MU - x[0]) + 0.01))
        .map_err(|e| e.to_string())?;
    let z_bad = martingale_test(&shifted, &family, &[X0], 1.0, 5.0, 1e-3, 100_000, SEEDS[0])
        .map_err(|e| e.to_string())?
        .z_score;
    check(
        passed && z_bad.abs() > 5.0,
        format!("consistent z = {zs:.2?}, drift + 0.01 z = {z_bad:.1}"),
    )
}

fn random_state(rng: &mut ChaCha8Rng) -> NsState {
    NsState::new(
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        rng.random_range(0.05..3.0),
    )
    .unwrap()
}

fn random_covariance(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
    let c = Matrix4::from_fn(|_, _| rng.random_range(-0.2..0.2));
    c * c.transpose() * 0.5
}

fn ns_derivative_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-6;
    let mut fd_err = 0.0f64;
    for _ in 0..100 {
        let x = random_state(&mut rng);
        let tau = rng.random_range(h..30.0);
        let xs = x.to_array();
        let d = ns_derivatives(&x, tau);
        let g = |t: f64, y: &[f64]| NelsonSiegel.value(t, y);
        fd_err = fd_err.max((d.dtau - (g(tau + h, &xs) - g(tau - h, &xs)) / (2.0 * h)).abs());
        for i in 0..4 {
            let (mut up, mut down) = (xs, xs);
            up[i] += h;
            down[i] -= h;
            fd_err = fd_err.max((d.gradient[i] - (g(tau, &up) - g(tau, &down)) / (2.0 * h)).abs());
            let dg = (NelsonSiegel.gradient(tau, &up) - NelsonSiegel.gradient(tau, &down)) / (2.0 * h);
            for j in 0..4 {
                fd_err = fd_err.max((d.hessian[(i, j)] - dg[j]).abs());
            }
        }
    }
    let mut log_f_err = 0.0f64;
    for _ in 0..500 {
        let x = random_state(&mut rng);
        let xi = [
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(0.0..1.0),
        ];
        let tau = rng.random_range(0.0..30.0);
        let xs = x.to_array();
        let diff = |u: f64| {
            xi[0] + ((xs[1] + xi[1]) + (xs[2] + xi[2]) * u) * (-(xs[3] + xi[3]) * u).exp()
                - (xs[1] + xs[2] * u) * (-xs[3] * u).exp()
        };
        let oracle = -integrate(&diff, 0.0, tau, 1e-14).map_err(|e| e.to_string())?.value;
        log_f_err = log_f_err.max((ns_log_f(&x, &xi, tau).map_err(|e| e.to_string())? - oracle).abs());
    }
    check(
        fd_err < 1e-6 && log_f_err < 1e-9,
        format!("derivatives vs finite differences {fd_err:.2e} (100 probes), log f vs quadrature {log_f_err:.2e} (500 probes)"),
    )
}

fn q_coefficient_anchors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let probes: Vec<_> = (0..20)
        .map(|_| {
            let x = random_state(&mut rng);
            let a = random_covariance(&mut rng);
            let b = Vector4::from_fn(|_, _| rng.random_range(-0.1..0.1));
            (x, a, b)
        })
        .collect();
    let mut anchors_ok = true;
    for (x, a, b) in &probes {
        let q = ns_q_coefficients(x, a, b);
        let quartic = -2.0 * a[(3, 3)] * x.curvature * x.curvature / x.decay;
        anchors_ok &= q.q0[1] == 2.0 * a[(0, 0)] && (q.q2[4] - quartic).abs() <= 1e-15 * quartic.abs();
    }
    let table = ns_q_discrepancies(&probes);
    for row in &table {
        println!(
            "      {:<5} max |published - derived| = {:.3e}  {}",
            row.coefficient,
            row.max_abs_difference,
            if row.agrees { "agrees" } else { "differs" }
        );
    }
    let mismatches: Vec<&str> = table.iter().filter(|r| !r.agrees).map(|r| r.coefficient.as_str()).collect();
    let constant_term_flagged = mismatches.contains(&"q0_0");
    check(
        anchors_ok && constant_term_flagged && table.len() == 11,
        format!("anchors exact on 20 probes: {anchors_ok}; published coefficients that differ: {mismatches:?}"),
    )
}

fn ns_model(c: Matrix4<f64>, intensity: f64) -> JumpDiffusionModel {
    JumpDiffusionModel::new(
        DomainBox::new(vec![f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0], vec![f64::INFINITY; 4]).unwrap(),
        ns_fitted_drift_function(),
        CoefficientFunction::constant(c.transpose().as_slice().to_vec(), 4),
        CoefficientFunction::constant(vec![intensity], 4),
        JumpMeasure::dirac_zero(4),
    )
    .unwrap()
}

fn impossibility_demonstration() -> Outcome {
    let xs = [
        NsState::new(0.04, -0.02, 0.03, 0.5).unwrap(),
        NsState::new(0.03, 0.01, -0.02, 1.2).unwrap(),
        NsState::new(0.05, -0.03, 0.05, 0.3).unwrap(),
        NsState::new(0.02, 0.02, 0.01, 2.0).unwrap(),
    ];
    let taus = DEFAULT_TAU_GRID;
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut weakest = f64::INFINITY;
    for _ in 0..50 {
        let mut c: Matrix4<f64> = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        c *= rng.random_range(0.05..0.3) / c.norm();
        let norm = (c * c.transpose() * 0.5).norm();
        if norm < 1e-3 {
            c *= (1e-3 / norm).sqrt();
        }
        let report = ns_impossibility_scan(&ns_model(c, 0.0), &xs, &taus, 1e-8).map_err(|e| e.to_string())?;
        if report.verdict != "inconsistent" {
            return Err(format!("randomized model scanned {}", report.verdict));
        }
        weakest = weakest.min(report.max_residual);
    }
    let mut trivial_max = 0.0f64;
    for intensity in [0.0, 0.7] {
        let report =
            ns_impossibility_scan(&ns_model(Matrix4::zeros(), intensity), &xs, &taus, 1e-8).map_err(|e| e.to_string())?;
        if report.verdict != "consistent" {
            return Err(format!("deterministic model scanned {}", report.verdict));
        }
        trivial_max = trivial_max.max(report.max_residual);
    }
    check(
        weakest > 1e-4 && trivial_max < 1e-8,
        format!("smallest randomized max residual {weakest:.2e} (50 models), deterministic {trivial_max:.2e}"),
    )
}

fn hjm_drift_cases() -> Outcome {
    let zero = Arc::new(|_: f64, _: f64, _: &[f64]| 0.0);
    let sigma0 = 0.015;
    let gaussian = HjmInputs::new(Arc::new(move |_, _| sigma0), zero, 0.0, JumpMeasure::dirac_zero(1)).unwrap();
    let mut err = 0.0f64;
    for (t, big_t) in [(0.0, 1.0), (0.5, 7.0), (2.0, 30.0)] {
        let d = hjm_drift(&gaussian, t, big_t, 1e-13).map_err(|e| e.to_string())?;
        err = err.max((d - sigma0 * sigma0 * (big_t - t)).abs());
    }
    let (rho0, rate) = (0.02, 0.8);
    for marks in [JumpMeasure::exponential(vec![3.0]).unwrap(), JumpMeasure::point(vec![1.0])] {
        let jumps = HjmInputs::new(Arc::new(|_, _| 0.0), Arc::new(move |_, _, _| rho0), rate, marks).unwrap();
        for (t, big_t) in [(0.0, 4.0), (1.0, 11.0)] {
            let d = hjm_drift(&jumps, t, big_t, 1e-13).map_err(|e| e.to_string())?;
            err = err.max((d - (-rho0 * (-rho0 * (big_t - t)).exp() * rate)).abs());
        }
    }
    check(err < 1e-10, format!("max error over both analytic cases {err:.2e}"))
}

fn cli_outputs(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let config = dir.join("run.json");
    std::fs::write(
        &config,
        r#"{"model": {"kind": "preset", "name": "jump-vasicek"}, "state": [0.03],
            "numerics": {"n_paths": 5000, "dt": 0.01, "seed": 17}}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for (k, cmd) in ["simulate", "martingale", "check", "price", "recover"].iter().enumerate() {
        let out = dir.join(format!("out{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_jumpcons"))
            .args([*cmd, "--quiet", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("{cmd} exited with {status}"));
        }
        let mut names: Vec<_> = std::fs::read_dir(&out).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
        names.sort();
        for path in names {
            files.push((path.display().to_string(), std::fs::read(&path).map_err(|e| e.to_string())?));
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let model = presets::jump_vasicek(KAPPA, MU, SIGMA, 0.3, 50.0).unwrap();
    let library_run = || -> Result<Vec<u8>, String> {
        let mut buf = Vec::new();
        simulate_state(&model, &[X0], 5.0, 1e-3, 23).map_err(|e| e.to_string())?.write_csv(&mut buf).map_err(|e| e.to_string())?;
        let est = mc_bond_price(&model, &|x| x[0], &[X0], 5.0, 1e-2, 20_000, 23).map_err(|e| e.to_string())?;
        buf.extend(format!("{:?} {:?}", est.mean.to_bits(), est.std_error.to_bits()).bytes());
        Ok(buf)
    };
    let library_same = library_run()? == library_run()?;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = (cli_outputs(a.path())?, cli_outputs(b.path())?);
    let cli_same = first.len() == second.len() && first.iter().zip(&second).all(|(x, y)| x.1 == y.1);
    check(
        library_same && cli_same,
        format!("library path + estimate identical: {library_same}; {} CLI output files identical: {cli_same}", first.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("GRE vs closed form (Vasicek H1)", gre_closed_form),
        ("pure-jump closed form (H0)", pure_jump_closed_form),
        ("consistency round-trip of solved families", consistency_round_trip),
        ("coefficient recovery round-trip", recovery_round_trip),
        ("Monte Carlo bond prices vs GRE", monte_carlo_agreement),
        ("martingale discrimination", martingale_discrimination),
        ("Nelson-Siegel derivative suite", ns_derivative_suite),
        ("Nelson-Siegel q-coefficient anchors", q_coefficient_anchors),
        ("Nelson-Siegel impossibility demonstration", impossibility_demonstration),
        ("HJM drift quadrature", hjm_drift_cases),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1} s]", k + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
