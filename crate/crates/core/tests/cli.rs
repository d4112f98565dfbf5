use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jumpcons::config::{PresetName, RunConfig};
use serde_json::Value;
use tempfile::TempDir;

const KAPPA: f64 = 0.5;
const MU: f64 = 0.04;
const SIGMA: f64 = 0.02;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jumpcons"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn diagnostic(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with('{')).collect();
    assert_eq!(lines.len(), 1, "stderr: {text}");
    serde_json::from_str(lines[0]).unwrap()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Rows of a CSV file as floats, keyed by the header.
fn read_csv(path: PathBuf) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn shipped_configs_parse_and_schema_is_current() {
    for name in ["vasicek", "cir-like", "jump-vasicek", "pure-jump", "ns-trivial", "zero-model"] {
        let cfg = RunConfig::from_path(&configs_dir().join(format!("{name}.json"))).unwrap();
        cfg.validate().unwrap();
        let model = cfg.base_model().unwrap();
        cfg.state(&model).unwrap();
    }
    let published = std::fs::read_to_string(configs_dir().join("schema.json")).unwrap();
    assert_eq!(published.trim_end(), RunConfig::schema());
    for name in [PresetName::Vasicek, PresetName::CirLike, PresetName::JumpVasicek, PresetName::PureJump, PresetName::NsTrivial] {
        let cfg = RunConfig::preset(name);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        cfg.base_model().unwrap();
    }
}

#[test]
fn price_vasicek_yield_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "v.json",
        r#"{"model": {"kind": "preset", "name": "vasicek"}, "state": [0.03], "grids": {"output_taus": [0.0, 5.0]}}"#,
    );
    let out = run(&["price"], &cfg, dir.path());
    assert_eq!(code(&out), 0);
    let (header, rows) = read_csv(dir.path().join("yield.csv"));
    assert_eq!(header, ["tau", "price", "yield"]);
    let tau = 5.0;
    let h1 = (1.0 - (-KAPPA * tau).exp()) / KAPPA;
    let h0 = (MU - SIGMA * SIGMA / (2.0 * KAPPA * KAPPA)) * (tau - h1) + SIGMA * SIGMA * h1 * h1 / (4.0 * KAPPA);
    let oracle = (h0 + h1 * 0.03) / tau;
    assert!((rows[1][2] - oracle).abs() < 1e-8, "{} vs {oracle}", rows[1][2]);
    assert_eq!(rows[0][2], 0.03);
    let (header, _) = read_csv(dir.path().join("hpath.csv"));
    assert_eq!(header, ["tau", "H_0", "H_1", "h_0", "h_1"]);
}

#[test]
fn price_zero_model_is_flat() {
    let dir = TempDir::new().unwrap();
    let out = run(&["price"], &configs_dir().join("zero-model.json"), dir.path());
    assert_eq!(code(&out), 0);
    let (_, rows) = read_csv(dir.path().join("yield.csv"));
    for row in rows {
        assert!((row[2] - 0.05).abs() < 1e-15);
    }
}

#[test]
fn price_pure_jump_loading() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "pj.json",
        r#"{"model": {"kind": "preset", "name": "pure-jump", "intensity": 0.4, "rate": 3.0}, "state": [0.0]}"#,
    );
    assert_eq!(code(&run(&["price"], &cfg, dir.path())), 0);
    let (_, rows) = read_csv(dir.path().join("hpath.csv"));
    assert_eq!(rows.len(), 121);
    for row in rows {
        let tau = row[0];
        let closed = 0.4 * (tau - 3.0 * (1.0 + tau / 3.0).ln());
        assert!((row[1] - closed).abs() < 1e-8);
    }
}

#[test]
fn price_explosion_reports_maturity() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "boom.json",
        r#"{"model": {"kind": "preset", "name": "cir-like", "sigma": 1.0},
            "family": {"kind": "affine", "theta": [0.0, -1.0]}, "numerics": {"tau_max": 10.0}}"#,
    );
    let out = run(&["price"], &cfg, dir.path());
    assert_eq!(code(&out), 3);
    let d = diagnostic(&out);
    assert_eq!(d["error"], "explosion");
    let tau = d["tau"].as_f64().unwrap();
    assert!(tau > 0.0 && tau < 10.0);
}

#[test]
fn check_verdicts_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = run(&["check"], &configs_dir().join("vasicek.json"), dir.path());
    assert_eq!(code(&out), 0);
    let verdict = read_json(dir.path().join("check.json"));
    assert_eq!(verdict["verdict"], "consistent");
    let (header, rows) = read_csv(dir.path().join("residuals.csv"));
    assert_eq!(header[..3], ["tau", "x1", "residual"]);
    assert_eq!(rows.len(), 8 * 16);

    let eps = 0.01;
    let cfg = write_config(
        &dir,
        "p.json",
        r#"{"model": {"kind": "preset", "name": "vasicek"}, "drift_shift": [0.01]}"#,
    );
    let out = run(&["check"], &cfg, &dir.path().join("p"));
    assert_eq!(code(&out), 4);
    assert_eq!(diagnostic(&out)["error"], "inconsistent");
    let verdict = read_json(dir.path().join("p/check.json"));
    assert_eq!(verdict["verdict"], "inconsistent");
    let expected = eps * (-KAPPA * 0.25f64).exp();
    assert!((verdict["max_abs"].as_f64().unwrap() - expected).abs() < 1e-8);
}

#[test]
fn check_irregular_jumps_on_numeric_family() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "reg.json",
        r#"{"model": {"kind": "preset", "name": "ns-trivial", "intensity": 0.5,
                      "jumps": {"kind": "gaussian", "mean": [0, 0, 0, 0], "stddev": [0, 0, 0, 1]}},
            "family": {"kind": "numeric", "base": {"kind": "nelson-siegel"}},
            "grids": {"x_points": [[0.03, -0.01, -0.02, 0.5]], "taus": [1.0, 5.0]}}"#,
    );
    let out = run(&["check"], &cfg, dir.path());
    assert_eq!(code(&out), 5);
    assert_eq!(diagnostic(&out)["error"], "regularity");
    assert_eq!(read_json(dir.path().join("check.json"))["verdict"], "failed");
}

#[test]
fn recover_round_trip_and_rank_deficiency() {
    let dir = TempDir::new().unwrap();
    let out = run(&["recover"], &configs_dir().join("vasicek.json"), dir.path());
    assert_eq!(code(&out), 0);
    let r = read_json(dir.path().join("recovered.json"));
    let b = r["recovered"]["b"][0].as_f64().unwrap();
    let a = r["recovered"]["a"][0][0].as_f64().unwrap();
    assert!((b - KAPPA * (MU - 0.03)).abs() < 1e-6);
    assert!((a - SIGMA * SIGMA / 2.0).abs() < 1e-6);
    assert!(r["recovered"]["lambda"].as_f64().unwrap().abs() < 1e-6);

    let flat = write_config(
        &dir,
        "flat.json",
        r#"{"model": {"kind": "affine", "dim": 1, "drift": {"constant": [0.0]}}, "state": [0.05],
            "recovery_jumps": {"kind": "none"}}"#,
    );
    let out = run(&["recover"], &flat, &dir.path().join("flat"));
    assert_eq!(code(&out), 6);
    assert_eq!(diagnostic(&out)["error"], "rank_deficient");
    assert_eq!(read_json(dir.path().join("flat/recovered.json"))["rank_deficient"], true);
}

#[test]
fn ns_demo_verdicts() {
    let dir = TempDir::new().unwrap();
    let out = run(&["ns-demo"], &configs_dir().join("ns-trivial.json"), dir.path());
    assert_eq!(code(&out), 0);
    let report = read_json(dir.path().join("ns_demo.json"));
    assert_eq!(report["scan"]["verdict"], "consistent");
    assert_eq!(report["discrepancies"].as_array().unwrap().len(), 11);
    let text = std::fs::read_to_string(dir.path().join("discrepancies.csv")).unwrap();
    assert!(text.starts_with("coefficient,max_abs_difference,agrees\nq0_0,"));
    assert!(text.contains("q1_2,") && text.contains(",false\n"));
    let (header, rows) = read_csv(dir.path().join("ns_scan.csv"));
    assert_eq!(header, ["tau", "x1", "x2", "x3", "x4", "residual"]);
    assert_eq!(rows.len(), 32);

    let cfg = write_config(
        &dir,
        "a11.json",
        r#"{"model": {"kind": "preset", "name": "ns-trivial",
                      "covariance": [[0.01, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]}}"#,
    );
    let out = run(&["ns-demo"], &cfg, &dir.path().join("a11"));
    assert_eq!(code(&out), 4);
    let report = read_json(dir.path().join("a11/ns_demo.json"));
    assert_eq!(report["scan"]["verdict"], "inconsistent");
    assert_eq!(report["scan"]["matches_expectation"], true);
}

fn small_mc(dir: &TempDir, extra: &str) -> PathBuf {
    write_config(
        dir,
        "mc.json",
        &format!(
            r#"{{"model": {{"kind": "preset", "name": "jump-vasicek"}}, "state": [0.03],
                "numerics": {{"n_paths": 2000, "dt": 0.01, "horizon": 2.0, "maturity": 3.0{extra}}}}}"#
        ),
    )
}

#[test]
fn stochastic_commands_need_a_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = small_mc(&dir, "");
    for cmd in ["simulate", "martingale"] {
        let out = run(&[cmd], &cfg, dir.path());
        assert_eq!(code(&out), 2);
        assert_eq!(diagnostic(&out)["error"], "invalid_input");
    }
    assert_eq!(code(&run(&["simulate", "--seed", "5"], &cfg, dir.path())), 0);
}

#[test]
fn outputs_are_byte_identical_for_a_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = small_mc(&dir, r#", "seed": 11"#);
    let outs: Vec<PathBuf> = (0..2).map(|k| dir.path().join(format!("run{k}"))).collect();
    for out in &outs {
        for cmd in ["simulate", "martingale", "check", "price"] {
            assert_eq!(code(&run(&[cmd], &cfg, out)), 0, "{cmd}");
        }
    }
    for name in ["path.csv", "simulate.json", "martingale.json", "residuals.csv", "check.json", "hpath.csv", "yield.csv"] {
        let a = std::fs::read(outs[0].join(name)).unwrap();
        let b = std::fs::read(outs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let other = dir.path().join("other");
    assert_eq!(code(&run(&["simulate", "--seed", "12"], &cfg, &other)), 0);
    assert_ne!(std::fs::read(other.join("path.csv")).unwrap(), std::fs::read(outs[0].join("path.csv")).unwrap());
}

#[test]
fn martingale_flags_a_shifted_drift() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "m.json",
        r#"{"model": {"kind": "preset", "name": "vasicek"}, "state": [0.03], "drift_shift": [0.01],
            "numerics": {"n_paths": 20000, "dt": 0.01, "seed": 3}}"#,
    );
    let out = run(&["martingale"], &cfg, dir.path());
    assert_eq!(code(&out), 4);
    let report = read_json(dir.path().join("martingale.json"));
    assert!(report["report"]["z_score"].as_f64().unwrap().abs() > 5.0);
}

#[test]
fn bad_configs_give_single_line_diagnostics() {
    let dir = TempDir::new().unwrap();
    let cases = [
        r#"{"model": {"kind": "preset", "name": "hull-white"}}"#,
        r#"{"model": {"kind": "preset", "name": "vasicek"}, "state": [0.1, 0.2]}"#,
        r#"{"model": {"kind": "preset", "name": "vasicek"}, "numerics": {"dt": -1}}"#,
        r#"{"model": {"kind": "preset", "name": "vasicek"}, "command": "recover"}"#,
        r#"{"model": {"kind": "preset", "name": "vasicek"}, "family": {"kind": "nelson-siegel"}}"#,
        r#"{"model": {"kind": "preset", "name": "vasicek"}, "unknown": 1}"#,
        "not json",
    ];
    for (k, text) in cases.iter().enumerate() {
        let cfg = write_config(&dir, &format!("bad{k}.json"), text);
        let out = run(&["price"], &cfg, dir.path());
        assert_eq!(code(&out), 2, "{text}");
        let d = diagnostic(&out);
        assert_eq!(d["exit_code"], 2);
        assert!(d["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_jumpcons")).arg("bogus").output().unwrap();
    assert_eq!(code(&out), 2);
    assert_eq!(diagnostic(&out)["error"], "usage");
}
