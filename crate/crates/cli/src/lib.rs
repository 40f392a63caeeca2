//! Command-line front end for `mvhjm-core`.
//!
//! A run reads a TOML config (see `docs/config.md`), executes one command
//! and writes CSV/JSON artifacts into `io.output_dir`.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use mvhjm_core::calibrate::{
    calibrate, load_market_csv, CalibrationConfig, CalibrationReport, GradMode, Quote,
};
use mvhjm_core::measures::{load_forward_curve, total_mass};
use mvhjm_core::models::check_admissibility;
use mvhjm_core::moments::{first_moment, particle_moment_bs, second_moment_affine, Estimate};
use mvhjm_core::simulate::{
    martingale_drift_test_with, simulate_affine_path, simulate_affine_paths, simulate_bs_path, DriftTestOptions,
    DriftTestReport, MeasurePath, PathGrid,
};
use mvhjm_core::{future_price, pair, DiscreteMeasure, FourierConfig, FourierPricer, FutureContract};
use mvhjm_core::rng::path_rng;
use serde::Serialize;

pub use config::{Command, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] mvhjm_core::Error),
    /// A statistical or admissibility check ran and did not pass.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    /// 1 for bad input and failed checks, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Core(mvhjm_core::Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:.17e}"))).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes `fit.csv` (strike, market, model) and `errors.csv`
/// (strike, abs, rel, sq). An empty report writes nothing.
pub fn emit_figures(report: &CalibrationReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if report.per_strike.is_empty() {
        log::warn!("calibration report has no strikes; no figure data written");
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let fit = dir.join("fit.csv");
    write_rows(&fit, &["strike", "market", "model"], report.per_strike.iter().map(|e| vec![e.strike, e.market, e.model]))?;
    let errors = dir.join("errors.csv");
    write_rows(
        &errors,
        &["strike", "abs", "rel", "sq"],
        report.per_strike.iter().map(|e| vec![e.strike, e.abs, e.rel, e.sq]),
    )?;
    Ok(vec![fit, errors])
}

/// What a run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub command: &'static str,
    pub outputs: Vec<PathBuf>,
    pub message: String,
}

/// Sets up the worker pool and runs the configured command.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Validation(format!("cannot start worker pool: {e}")))?;
    fs::create_dir_all(&cfg.io.output_dir).map_err(|e| io_err(&cfg.io.output_dir, e))?;
    pool.install(|| match cfg.command {
        Command::Price => price(cfg),
        Command::Simulate => simulate(cfg),
        Command::Moments => moments(cfg),
        Command::Calibrate => calibrate_cmd(cfg),
        Command::CheckDrift => check_drift(cfg),
        Command::CheckAdmissibility => admissibility(cfg),
    })
}

fn initial_measure(cfg: &RunConfig) -> Result<DiscreteMeasure, CliError> {
    let path = cfg.io.forward_curve.as_ref().ok_or_else(|| CliError::Validation("io.forward_curve is required".into()))?;
    Ok(load_forward_curve(path, cfg.contract.tau2, cfg.io.day_ahead)?.measure)
}

fn fourier(cfg: &RunConfig) -> FourierConfig {
    FourierConfig { damping: cfg.contract.damping, lambda_max: cfg.fourier.lambda_max, n_lambda: cfg.fourier.n_lambda }
}

fn price(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let mu0 = initial_measure(cfg)?;
    let alpha = cfg.model.build_alpha(mu0.horizon(), cfg.seed)?;
    let contract = FutureContract::uniform(cfg.contract.tau1, cfg.contract.tau2)?;
    let pricer = FourierPricer::new(&mu0, &contract, cfg.contract.exercise, &alpha, &fourier(cfg))?;
    let scale = cfg.io.day_ahead;
    let mut quotes = Vec::with_capacity(cfg.io.strikes.len());
    for &k in &cfg.io.strikes {
        quotes.push(Quote { strike: k * scale, price: pricer.price(k)? * scale });
    }
    let out = cfg.io.output_dir.join("prices.csv");
    mvhjm_core::calibrate::write_quotes(&out, &quotes)?;
    Ok(RunSummary {
        command: "price",
        outputs: vec![out],
        message: format!("priced {} strikes; forward {:.6}", quotes.len(), pricer.forward() * scale),
    })
}

fn path_grid(end: Option<f64>, default_end: f64, n_steps: usize) -> Result<PathGrid, CliError> {
    Ok(PathGrid::uniform(end.unwrap_or(default_end), n_steps)?)
}

#[derive(Serialize)]
struct MassRow {
    t: f64,
    mean_mass: f64,
    mass_se: f64,
    mean_future: f64,
    future_se: f64,
}

fn simulate(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let mu0 = initial_measure(cfg)?;
    let s = &cfg.simulate;
    if s.n_paths < 2 {
        return Err(CliError::Validation("simulate.n_paths must be >= 2".into()));
    }
    let grid = path_grid(s.end, cfg.contract.exercise, s.n_steps)?;
    let contract = FutureContract::uniform(cfg.contract.tau1, cfg.contract.tau2)?;
    let paths: Vec<MeasurePath> = match cfg.model.kind {
        config::ModelKind::Affine => {
            let alpha = cfg.model.build_alpha(mu0.horizon(), cfg.seed)?;
            simulate_affine_paths(&mu0, &grid, &alpha, s.n_paths, cfg.seed)?
        }
        config::ModelKind::BlackScholes => {
            use rayon::prelude::*;
            let k = cfg.model.kernels();
            (0..s.n_paths as u64)
                .into_par_iter()
                .map(|p| simulate_bs_path(&mu0, &grid, &k, &mut path_rng(cfg.seed, p)))
                .collect::<mvhjm_core::Result<_>>()?
        }
    };
    let mut rows = Vec::with_capacity(grid.times().len());
    for (i, &t) in grid.times().iter().enumerate() {
        let masses: Vec<f64> = paths.iter().map(|p| total_mass(&p.states[i])).collect();
        let mass = Estimate::from_samples(&masses);
        let (fut_mean, fut_se) = if t <= contract.tau1() {
            let f: Vec<f64> =
                paths.iter().map(|p| future_price(&p.states[i], t, &contract)).collect::<mvhjm_core::Result<_>>()?;
            let e = Estimate::from_samples(&f);
            (e.estimate, e.std_error)
        } else {
            (f64::NAN, f64::NAN)
        };
        rows.push(MassRow { t, mean_mass: mass.estimate, mass_se: mass.std_error, mean_future: fut_mean, future_se: fut_se });
    }
    let summary = cfg.io.output_dir.join("summary.csv");
    write_rows(
        &summary,
        &["t", "mean_mass", "mass_se", "mean_future", "future_se"],
        rows.iter().map(|r| vec![r.t, r.mean_mass, r.mass_se, r.mean_future, r.future_se]),
    )?;
    let mut outputs = vec![summary];
    for (i, p) in paths.iter().take(s.write_paths).enumerate() {
        let out = cfg.io.output_dir.join(format!("path_{i}.csv"));
        p.write_csv(&out)?;
        outputs.push(out);
    }
    Ok(RunSummary { command: "simulate", outputs, message: format!("simulated {} paths", s.n_paths) })
}

#[derive(Serialize)]
struct MomentsOutput {
    model: config::ModelKind,
    test_function: String,
    t: f64,
    order: usize,
    first_moment: f64,
    /// Closed form for the affine model, particle estimate otherwise.
    moment: f64,
    moment_std_error: Option<f64>,
    monte_carlo: Option<Estimate>,
}

fn moments(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let mu0 = initial_measure(cfg)?;
    let m = &cfg.moments;
    let g = m.test_function.build();
    let t = m.t.unwrap_or(cfg.contract.exercise);
    let first = first_moment(&mu0, &g, t)?;
    let out = match cfg.model.kind {
        config::ModelKind::Affine => {
            if !(1..=2).contains(&m.order) {
                return Err(CliError::Validation("affine moments support order 1 or 2".into()));
            }
            let alpha = cfg.model.build_alpha(mu0.horizon(), cfg.seed)?;
            let exact = if m.order == 1 { first } else { second_moment_affine(&mu0, &g, &alpha, t, m.n_quad)? };
            let mc = if m.n_paths >= 2 {
                let grid = PathGrid::new(vec![0.0, t])?;
                let order = m.order as i32;
                let samples: Vec<f64> = {
                    use rayon::prelude::*;
                    (0..m.n_paths as u64)
                        .into_par_iter()
                        .map(|p| {
                            let path = simulate_affine_path(&mu0, &grid, &alpha, &mut path_rng(cfg.seed, p))?;
                            Ok(pair(&g, &path.states[1])?.powi(order))
                        })
                        .collect::<mvhjm_core::Result<_>>()?
                };
                Some(Estimate::from_samples(&samples))
            } else {
                None
            };
            MomentsOutput {
                model: cfg.model.kind,
                test_function: g.label().to_owned(),
                t,
                order: m.order,
                first_moment: first,
                moment: exact,
                moment_std_error: None,
                monte_carlo: mc,
            }
        }
        config::ModelKind::BlackScholes => {
            let est = particle_moment_bs(&mu0, &g, m.order, t, &cfg.model.kernels(), m.n_paths, cfg.seed)?;
            MomentsOutput {
                model: cfg.model.kind,
                test_function: g.label().to_owned(),
                t,
                order: m.order,
                first_moment: first,
                moment: est.estimate,
                moment_std_error: Some(est.std_error),
                monte_carlo: None,
            }
        }
    };
    let path = cfg.io.output_dir.join("moments.json");
    write_json(&path, &out)?;
    Ok(RunSummary {
        command: "moments",
        outputs: vec![path],
        message: format!("E<g, mu_t>^{} = {:.6e}", out.order, out.moment),
    })
}

fn calibrate_cmd(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let curve = cfg.io.forward_curve.as_ref().expect("validated");
    let quotes = cfg.io.quotes.as_ref().expect("validated");
    let data = load_market_csv(curve, quotes, cfg.io.day_ahead, &cfg.contract.market_options())?;
    let c = &cfg.calibrate;
    let ccfg = CalibrationConfig {
        learning_rate: c.learning_rate,
        max_iters: c.max_iters,
        grad_mode: match c.grad_mode {
            config::GradModeSpec::Backprop => GradMode::Backprop,
            config::GradModeSpec::FiniteDifference => GradMode::FiniteDifference { h: c.fd_step },
        },
        fourier: fourier(cfg),
        seed: cfg.seed,
        clip_norm: (c.clip_norm > 0.0).then_some(c.clip_norm),
        tolerance: c.tolerance,
    };
    let init = cfg.model.build_alpha(data.forward_curve.horizon(), cfg.seed)?;
    let outcome = calibrate(&data, &init, &ccfg)?;
    let dir = &cfg.io.output_dir;
    let report_path = dir.join("calibration_report.json");
    write_json(&report_path, &outcome.report)?;
    let alpha_path = dir.join("alpha_fitted.json");
    outcome.alpha.save_json(&alpha_path)?;
    let mut outputs = vec![report_path, alpha_path];
    outputs.extend(emit_figures(&outcome.report, dir)?);
    Ok(RunSummary {
        command: "calibrate",
        outputs,
        message: format!(
            "mean absolute error {:.3e} after {} iterations (best at {})",
            outcome.report.mean_abs_error, outcome.report.iterations, outcome.report.best_iteration
        ),
    })
}

#[derive(Serialize)]
struct DriftOutput {
    pass: bool,
    n_paths: usize,
    reports: Vec<DriftTestReport>,
}

fn check_drift(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let mu0 = initial_measure(cfg)?;
    let d = &cfg.drift;
    let alpha = cfg.model.build_alpha(mu0.horizon(), cfg.seed)?;
    let grid = path_grid(d.end, cfg.contract.exercise, d.n_steps)?;
    let paths = simulate_affine_paths(&mu0, &grid, &alpha, d.n_paths, cfg.seed)?;
    let opts = DriftTestOptions { threshold: d.threshold, ..Default::default() };
    let reports = d
        .test_functions
        .iter()
        .map(|spec| martingale_drift_test_with(&paths, &spec.build(), d.gamma, &opts))
        .collect::<mvhjm_core::Result<Vec<_>>>()?;
    let out = DriftOutput { pass: reports.iter().all(|r| r.pass), n_paths: d.n_paths, reports };
    let path = cfg.io.output_dir.join("drift_report.json");
    write_json(&path, &out)?;
    let worst = out.reports.iter().map(|r| r.max_abs_z).fold(0.0, f64::max);
    if !out.pass {
        return Err(CliError::CheckFailed(format!(
            "drift test rejected: max |z| = {worst:.2} (report in {})",
            path.display()
        )));
    }
    Ok(RunSummary { command: "check-drift", outputs: vec![path], message: format!("pass; max |z| = {worst:.2}") })
}

fn admissibility(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let a = &cfg.admissibility;
    let report = check_admissibility(&cfg.model.kernels(), a.horizon, a.samples, cfg.seed)?;
    let path = cfg.io.output_dir.join("admissibility_report.json");
    write_json(&path, &report)?;
    if !report.pass {
        return Err(CliError::CheckFailed(format!(
            "kernels are not admissible: min eigenvalue {:.3e} (report in {})",
            report.min_eigenvalue,
            path.display()
        )));
    }
    Ok(RunSummary {
        command: "check-admissibility",
        outputs: vec![path],
        message: format!("admissible over {} samples", report.samples),
    })
}
