use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mvhjm_cli::config::{apply_override, parse_override};
use mvhjm_cli::emit_figures;
use mvhjm_core::calibrate::{read_quotes, CalibrationReport};
use mvhjm_core::simulate::MeasurePath;
use mvhjm_core::AlphaFunction;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvhjm"))
}

/// Atoms every 0.01 up to 0.3 with weight `0.01 * (1 + x)`.
fn write_curve(dir: &Path) -> (PathBuf, Vec<(f64, f64)>) {
    let atoms: Vec<(f64, f64)> = (0..=30).map(|k| k as f64 * 0.01).map(|x| (x, 0.01 * (1.0 + x))).collect();
    let mut text = String::from("x,weight\n");
    for (x, w) in &atoms {
        text.push_str(&format!("{x},{w}\n"));
    }
    let path = dir.join("curve.csv");
    fs::write(&path, text).unwrap();
    (path, atoms)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

const CONTRACT: &str = "[contract]\ntau1 = 0.1\ntau2 = 0.2\nexercise = 0.05\n";

#[test]
fn price_without_volatility_is_intrinsic_value() {
    let dir = TempDir::new().unwrap();
    let (_, atoms) = write_curve(dir.path());
    let cfg = write_config(
        dir.path(),
        &format!(
            "command = \"price\"\n[model]\nalpha = {{ kind = \"constant\", value = 0.0 }}\n\
             [io]\nforward_curve = \"curve.csv\"\nstrikes = [0.0, 0.05, 0.1, 0.15, 0.2]\n{CONTRACT}"
        ),
    );
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // with alpha = 0 the atoms only move left, so the delivery window sees
    // exactly the atoms in (tau1, tau2] of the initial curve
    let f: f64 = atoms
        .iter()
        .filter(|(x, _)| *x > 0.1 + 1e-12 && *x <= 0.2 + 1e-12)
        .map(|(_, w)| w / 0.1)
        .sum();
    let quotes = read_quotes(&dir.path().join("out/prices.csv")).unwrap();
    assert_eq!(quotes.len(), 5);
    for q in quotes {
        let expected = (f - q.strike).max(0.0);
        assert!((q.price - expected).abs() <= 1e-12 * (1.0 + f), "K = {}: {} vs {expected}", q.strike, q.price);
    }
}

#[test]
fn missing_forward_curve_exits_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "command = \"price\"\n[io]\nforward_curve = \"missing.csv\"\n");
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
}

#[test]
fn unknown_key_exits_with_validation_code() {
    let dir = TempDir::new().unwrap();
    write_curve(dir.path());
    let cfg = write_config(dir.path(), "command = \"price\"\n[io]\nforward_curve = \"curve.csv\"\nstrike = 1\n");
    assert_eq!(bin().arg("run").arg(&cfg).output().unwrap().status.code(), Some(1));
}

#[test]
fn excessive_damping_exits_with_numerical_code() {
    let dir = TempDir::new().unwrap();
    write_curve(dir.path());
    let cfg = write_config(
        dir.path(),
        &format!(
            "command = \"price\"\n[model]\nalpha = {{ kind = \"constant\", value = 5.0 }}\n\
             [io]\nforward_curve = \"curve.csv\"\n{CONTRACT}damping = 1e6\n"
        ),
    );
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn check_drift_passes_on_exact_paths() {
    let dir = TempDir::new().unwrap();
    write_curve(dir.path());
    let cfg = write_config(
        dir.path(),
        &format!(
            "command = \"check-drift\"\nseed = 5\n[model]\nalpha = {{ kind = \"constant\", value = 0.3 }}\n\
             [io]\nforward_curve = \"curve.csv\"\n{CONTRACT}[drift]\nn_paths = 2000\nn_steps = 40\n"
        ),
    );
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/drift_report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    assert_eq!(report["reports"].as_array().unwrap().len(), 3);
}

#[test]
fn subcommand_and_overrides_replace_config_values() {
    let dir = TempDir::new().unwrap();
    write_curve(dir.path());
    let cfg = write_config(
        dir.path(),
        &format!(
            "command = \"price\"\n[model]\nalpha = {{ kind = \"file\", path = \"nowhere.json\" }}\n\
             [io]\nforward_curve = \"curve.csv\"\n{CONTRACT}"
        ),
    );
    let out = bin()
        .args(["simulate".as_ref(), cfg.as_os_str()])
        .args(["--model.alpha.kind=constant", "--model.alpha.value=0.2", "--simulate.n_paths=10", "--simulate.n_steps=5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/summary.csv").exists());
}

fn simulate_once(dir: &Path, threads: usize) -> (Vec<u8>, Vec<u8>) {
    let cfg = write_config(
        dir,
        &format!(
            "command = \"simulate\"\nseed = 9\nthreads = {threads}\n[model]\nalpha = {{ kind = \"constant\", value = 0.4 }}\n\
             [io]\nforward_curve = \"curve.csv\"\n{CONTRACT}[simulate]\nn_paths = 200\nn_steps = 10\nwrite_paths = 1\n"
        ),
    );
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (fs::read(dir.join("out/summary.csv")).unwrap(), fs::read(dir.join("out/path_0.csv")).unwrap())
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    write_curve(dir.path());
    let a = simulate_once(dir.path(), 1);
    let b = simulate_once(dir.path(), 3);
    assert_eq!(a, b);
}

#[test]
fn written_paths_load_back() {
    let dir = TempDir::new().unwrap();
    write_curve(dir.path());
    simulate_once(dir.path(), 1);
    let path = MeasurePath::read_csv(&dir.path().join("out/path_0.csv"), 0.3).unwrap();
    assert_eq!(path.grid.times().len(), 11);
    assert!((path.grid.end() - 0.05).abs() < 1e-15);
}

#[test]
fn calibrate_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    write_curve(dir.path());
    let mut quotes = String::from("strike,price\n");
    for k in [0.12, 0.14, 0.16] {
        quotes.push_str(&format!("{k},{}\n", (0.155f64 - k).max(0.0) + 0.002));
    }
    fs::write(dir.path().join("quotes.csv"), quotes).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "command = \"calibrate\"\n[model]\nalpha = {{ kind = \"grid\", grid = [0.0, 0.3], values = [0.5, 0.5] }}\n\
             [io]\nforward_curve = \"curve.csv\"\nquotes = \"quotes.csv\"\n{CONTRACT}[calibrate]\nmax_iters = 5\n"
        ),
    );
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let report: CalibrationReport =
        serde_json::from_str(&fs::read_to_string(o.join("calibration_report.json")).unwrap()).unwrap();
    assert_eq!(report.per_strike.len(), 3);
    assert_eq!(report.loss_trace.len(), 6);
    AlphaFunction::load_json(&o.join("alpha_fitted.json"), 0.3).unwrap();
    let fit = fs::read_to_string(o.join("fit.csv")).unwrap();
    assert!(fit.starts_with("strike,market,model\n"));
    assert_eq!(fit.lines().count(), 4);
}

#[test]
fn admissibility_rejects_negative_jump_kernel() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "command = \"check-admissibility\"\n[model]\nkind = \"black_scholes\"\n\
         pi = { kind = \"off_diagonal\", value = -1.0 }\n[admissibility]\nsamples = 50\n",
    );
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("out/admissibility_report.json").exists());
}

fn report(market: &[f64], model: &[f64]) -> CalibrationReport {
    let strikes: Vec<f64> = (0..market.len()).map(|i| 0.9 + 0.2 * i as f64 / 9.0).collect();
    CalibrationReport::from_prices(&strikes, market, model)
}

#[test]
fn identical_prices_give_zero_errors() {
    let dir = TempDir::new().unwrap();
    let p: Vec<f64> = (0..10).map(|i| 0.1 - 0.01 * i as f64).collect();
    emit_figures(&report(&p, &p), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<(f64, f64, f64, f64)> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|&(_, a, b, c)| a == 0.0 && b == 0.0 && c == 0.0));
}

#[test]
fn ten_strikes_give_ten_rows() {
    let dir = TempDir::new().unwrap();
    let market: Vec<f64> = (0..10).map(|i| 0.1 - 0.01 * i as f64).collect();
    let model: Vec<f64> = market.iter().map(|p| p + 1e-4).collect();
    let files = emit_figures(&report(&market, &model), dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    for f in files {
        assert_eq!(fs::read_to_string(f).unwrap().lines().count(), 11);
    }
}

#[test]
fn empty_report_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let files = emit_figures(&report(&[], &[]), dir.path()).unwrap();
    assert!(files.is_empty());
    assert!(!dir.path().join("fit.csv").exists());
}

#[test]
fn override_values_parse_as_toml_or_strings() {
    let (p, v) = parse_override("--calibrate.learning_rate=0.5").unwrap();
    assert_eq!(p, ["calibrate", "learning_rate"]);
    assert_eq!(v.as_float(), Some(0.5));
    let (_, v) = parse_override("--io.output_dir=results/a").unwrap();
    assert_eq!(v.as_str(), Some("results/a"));
    let (_, v) = parse_override("--io.strikes=[1.0, 2.0]").unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(parse_override("--io.day_ahead").is_err());
    assert!(parse_override("--.x=1").is_err());
}

#[test]
fn override_of_kind_drops_old_fields() {
    let mut t: toml::Table = "[model]\nalpha = { kind = \"file\", path = \"a.json\" }\n".parse().unwrap();
    let (p, v) = parse_override("--model.alpha.kind=constant").unwrap();
    apply_override(&mut t, &p, v).unwrap();
    let alpha = t["model"]["alpha"].as_table().unwrap();
    assert!(alpha.get("path").is_none());
    let (p, v) = parse_override("--model.alpha.kind=constant").unwrap();
    let (p2, v2) = parse_override("--model.alpha.value=1.5").unwrap();
    apply_override(&mut t, &p2, v2).unwrap();
    apply_override(&mut t, &p, v).unwrap();
    assert_eq!(t["model"]["alpha"]["value"].as_float(), Some(1.5));
}
