use jumpcons::config::FamilySpec;
use jumpcons::consistency::{recover_coefficients, residual_report};
use jumpcons::model::{JumpDiffusionModel, JumpMeasure};
use jumpcons::nelson_siegel::{
    ns_impossibility_scan, ns_q_discrepancies, ns_regularity_check, NsState, QDiscrepancy,
};
use jumpcons::separable::{write_yield_csv, yield_curve};
use jumpcons::simulate::{martingale_test, mc_bond_price, simulate_state};
use jumpcons::Error;
use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{Failure, Run};

const MARTINGALE_THRESHOLD: f64 = 3.0;

/// `(r₂, r₃)` probes of the Nelson–Siegel moment condition.
const NS_REGULARITY_PROBES: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (5.0, 5.0)];

/// States scanned by `ns-demo` when no `x_points` are configured.
const NS_SCAN_STATES: [[f64; 4]; 4] = [
    [0.04, -0.02, 0.03, 0.5],
    [0.03, 0.01, -0.02, 1.2],
    [0.05, -0.03, 0.05, 0.3],
    [0.02, 0.02, 0.01, 2.0],
];

/// Jump law used to identify a zero intensity when the model has no jumps.
const RECOVERY_PROBE_RATE: f64 = 10.0;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> jumpcons::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

pub fn price(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    if !matches!(cfg.family_spec(), FamilySpec::Affine { .. } | FamilySpec::Separable { .. }) {
        return Err(Failure::Spec("price needs an affine or separable family".into()));
    }
    let model = cfg.base_model()?;
    let x = cfg.state(&model)?;
    let family = cfg.build_family(&model)?;
    let path = family.path.expect("separable families carry their Riccati solution");
    let taus = cfg.output_taus();
    run.write("hpath.csv", &csv_bytes(|b| path.write_csv(b, &taus))?)?;
    let curve = yield_curve(&path, &x, &taus)?;
    run.write("yield.csv", &csv_bytes(|b| write_yield_csv(b, &curve))?)?;
    let last = curve.last().expect("output maturities are non-empty");
    let summary = json!({
        "command": "price",
        "state": x,
        "tau_max": path.tau_max(),
        "diagnostics": path.diagnostics(),
        "last": { "tau": last.tau, "price": last.price, "yield": last.yield_ },
    });
    run.write_json("price.json", &summary)?;
    run.report(&summary);
    Ok(())
}

pub fn check(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    let base = cfg.base_model()?;
    let family = cfg.build_family(&base)?;
    let model = cfg.dynamics(&base)?;
    let xs = cfg.x_points(&model)?;
    let tol = cfg.numerics.tol;
    let report = residual_report(&model, family.curve.as_ref(), &cfg.taus(), &xs, cfg.numerics.quad_tol)?;
    run.write("residuals.csv", &csv_bytes(|b| report.write_csv(b))?)?;
    let summary = report.summary(tol);
    run.write_json("check.json", &summary)?;
    run.report(&json!({
        "command": "check",
        "verdict": summary.verdict,
        "max_abs": summary.max_abs,
        "tolerance": tol,
    }));
    let regularity = report.failures.iter().find(|f| matches!(f.error, Error::Regularity { .. }));
    if let Some(failure) = regularity.or(report.first_failure()) {
        return Err(failure.error.clone().into());
    }
    if !report.is_consistent(tol) {
        return Err(Failure::Inconsistent(format!(
            "max residual {:e} exceeds tolerance {tol:e}",
            report.max_abs
        )));
    }
    Ok(())
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|k| lo * (ratio * k as f64).exp()).collect()
}

pub fn recover(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    let model = cfg.base_model()?;
    let x = cfg.state(&model)?;
    let family = cfg.build_family(&model)?;
    let n = model.dim();
    let unknowns = n + n * (n + 1) / 2 + 1;
    let taus = cfg.grids.taus.clone().unwrap_or_else(|| {
        log_grid(0.1, cfg.numerics.tau_max.min(15.0), (2 * unknowns).max(12))
    });
    let (source, jumps) = match &cfg.recovery_jumps {
        Some(spec) => ("config", spec.build(n)?),
        None if model.jumps().is_dirac_zero() => ("probe", JumpMeasure::exponential(vec![RECOVERY_PROBE_RATE; n])?),
        None => ("model", model.jumps().clone()),
    };
    let rec = recover_coefficients(family.curve.as_ref(), &jumps, &x, &taus, cfg.numerics.quad_tol)?;
    let (b, a, lambda) = (model.drift_at(&x), model.covariance_at(&x), model.intensity_at(&x));
    let summary = json!({
        "command": "recover",
        "state": x,
        "taus": taus,
        "jump_measure": source,
        "recovered": { "b": rec.b.as_slice(), "a": rows(&rec.a), "lambda": rec.lambda },
        "generating": { "b": b.as_slice(), "a": rows(&a), "lambda": lambda },
        "max_abs_error": {
            "b": (&rec.b - &b).amax(),
            "a": (&rec.a - &a).amax(),
            "lambda": (rec.lambda - lambda).abs(),
        },
        "residual_norm": rec.residual_norm,
        "condition_number": rec.condition_number,
        "rank_deficient": rec.rank_deficient,
    });
    run.write_json("recovered.json", &summary)?;
    run.report(&summary);
    if rec.rank_deficient {
        return Err(Failure::RankDeficient(format!(
            "design matrix condition number {:e}; returned the minimum-norm solution",
            rec.condition_number
        )));
    }
    Ok(())
}

fn discrepancy_probes(count: usize, seed: u64) -> Vec<(NsState, Matrix4<f64>, Vector4<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = NsState::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.05..3.0),
            )
            .expect("decay is positive");
            let c = Matrix4::from_fn(|_, _| rng.random_range(-0.2..0.2));
            let b = Vector4::from_fn(|_, _| rng.random_range(-0.1..0.1));
            (x, c * c.transpose() * 0.5, b)
        })
        .collect()
}

fn write_discrepancies(run: &Run, table: &[QDiscrepancy]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::Core(Error::Io(format!("csv output: {e}")));
    w.write_record(["coefficient", "max_abs_difference", "agrees"]).map_err(io)?;
    for row in table {
        w.write_record([
            row.coefficient.clone(),
            jumpcons::output::fmt_float(row.max_abs_difference),
            row.agrees.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Core(Error::Io(e.to_string())))?;
    run.write("discrepancies.csv", &bytes)
}

fn ns_states(model: &JumpDiffusionModel, points: Option<&Vec<Vec<f64>>>) -> Result<Vec<NsState>, Failure> {
    if model.dim() != 4 {
        return Err(Failure::Spec(format!("ns-demo needs a four-dimensional model, got {}", model.dim())));
    }
    match points {
        None => Ok(NS_SCAN_STATES.iter().map(|x| NsState::from_slice(x)).collect::<Result<_, _>>()?),
        Some(points) => Ok(points.iter().map(|x| NsState::from_slice(x)).collect::<Result<_, _>>()?),
    }
}

pub fn ns_demo(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    let model = cfg.dynamics(&cfg.base_model()?)?;
    let xs = ns_states(&model, cfg.grids.x_points.as_ref())?;
    let regularity = ns_regularity_check(model.jumps(), &NS_REGULARITY_PROBES, cfg.numerics.quad_tol)?;
    let table = ns_q_discrepancies(&discrepancy_probes(
        cfg.numerics.discrepancy_probes.max(1),
        cfg.numerics.seed.unwrap_or(0),
    ));
    write_discrepancies(run, &table)?;
    if !regularity.regular {
        run.write_json("ns_demo.json", &json!({ "regularity": regularity, "discrepancies": table }))?;
        return Err(Failure::Irregular(format!(
            "jump moments diverge at probe {:?}",
            regularity.failing_probe
        )));
    }
    let scan = ns_impossibility_scan(&model, &xs, &cfg.taus(), cfg.numerics.tol)?;
    run.write("ns_scan.csv", &csv_bytes(|b| scan.write_csv(b))?)?;
    run.write_json(
        "ns_demo.json",
        &json!({ "regularity": regularity, "discrepancies": table, "scan": scan }),
    )?;
    run.report(&json!({
        "command": "ns-demo",
        "verdict": scan.verdict,
        "max_residual": scan.max_residual,
        "matches_expectation": scan.matches_expectation,
        "published_mismatches": table.iter().filter(|r| !r.agrees).count(),
    }));
    if scan.verdict != "consistent" {
        return Err(Failure::Inconsistent(format!(
            "max Nelson–Siegel residual {:e} exceeds tolerance {:e}",
            scan.max_residual, scan.tolerance
        )));
    }
    Ok(())
}

pub fn simulate(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    let num = &cfg.numerics;
    let seed = num.seed.expect("seed checked before dispatch");
    let base = cfg.base_model()?;
    let x0 = cfg.state(&base)?;
    let family = cfg.build_family(&base)?;
    let model = cfg.dynamics(&base)?;
    let path = simulate_state(&model, &x0, num.horizon, num.dt, seed)?;
    run.write("path.csv", &csv_bytes(|b| path.write_csv(b))?)?;
    let curve = family.curve.as_ref();
    let short_rate = |x: &[f64]| curve.value(0.0, x);
    let estimate = mc_bond_price(&model, &short_rate, &x0, num.horizon, num.dt, num.n_paths, seed)?;
    let model_price = (num.horizon <= curve.max_maturity()).then(|| curve.bond_price(num.horizon, &x0));
    let z_score = model_price.map(|p| (estimate.mean - p) / estimate.std_error);
    let summary = json!({
        "command": "simulate",
        "seed": seed,
        "dt": path.dt,
        "horizon": num.horizon,
        "state": x0,
        "path_jumps": path.jumps.len(),
        "path_flagged": path.flagged,
        "bond": estimate,
        "model_price": model_price,
        "z_score": z_score,
    });
    run.write_json("simulate.json", &summary)?;
    run.report(&summary);
    Ok(())
}

pub fn martingale(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    let num = &cfg.numerics;
    let seed = num.seed.expect("seed checked before dispatch");
    let base = cfg.base_model()?;
    let x0 = cfg.state(&base)?;
    let family = cfg.build_family(&base)?;
    let model = cfg.dynamics(&base)?;
    let report = martingale_test(&model, family.curve.as_ref(), &x0, num.t, num.maturity, num.dt, num.n_paths, seed)?;
    let passes = report.passes(MARTINGALE_THRESHOLD);
    let summary = json!({
        "command": "martingale",
        "seed": seed,
        "t": num.t,
        "maturity": num.maturity,
        "dt": num.dt,
        "state": x0,
        "report": report,
        "threshold": MARTINGALE_THRESHOLD,
        "passes": passes,
    });
    run.write_json("martingale.json", &summary)?;
    run.report(&summary);
    if !passes {
        return Err(Failure::Inconsistent(format!(
            "discounted bond price drifts: z = {}",
            report.z_score
        )));
    }
    Ok(())
}
