//! Run configuration: a TOML file with sections, plus `--section.key=value`
//! overrides from the command line.

use std::path::{Path, PathBuf};

use mvhjm_core::calibrate::MarketOptions;
use mvhjm_core::models::{AlphaFile, BsKernels, Kernel};
use mvhjm_core::{AlphaFunction, TestFunction};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Price,
    Simulate,
    Moments,
    Calibrate,
    CheckDrift,
    CheckAdmissibility,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Price => "price",
            Command::Simulate => "simulate",
            Command::Moments => "moments",
            Command::Calibrate => "calibrate",
            Command::CheckDrift => "check-drift",
            Command::CheckAdmissibility => "check-admissibility",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; defaults to the available parallelism.
    pub threads: Option<usize>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub contract: ContractSection,
    #[serde(default)]
    pub io: IoSection,
    #[serde(default)]
    pub fourier: FourierSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub moments: MomentsSection,
    #[serde(default)]
    pub calibrate: CalibrateSection,
    #[serde(default)]
    pub drift: DriftSection,
    #[serde(default)]
    pub admissibility: AdmissibilitySection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Affine,
    BlackScholes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaSpec {
    Constant { value: f64 },
    Grid { grid: Vec<f64>, values: Vec<f64> },
    /// JSON file in the `alpha_fitted.json` format.
    File { path: PathBuf },
    /// Network pretrained towards the constant `alpha0`.
    Neural {
        alpha0: f64,
        #[serde(default = "default_width")]
        width: usize,
        #[serde(default = "default_pretrain")]
        pretrain_steps: usize,
    },
}

fn default_width() -> usize {
    32
}

fn default_pretrain() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub alpha: AlphaSpec,
    pub beta: KernelSpec,
    pub pi: KernelSpec,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { kind: ModelKind::Affine, alpha: AlphaSpec::Constant { value: 0.0 }, beta: KernelSpec::Zero, pi: KernelSpec::Zero }
    }
}

/// Serializable kernels; custom closures have no file form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Zero,
    Constant { value: f64 },
    Gaussian { scale: f64, length: f64 },
    Exponential { scale: f64, rate: f64 },
    OffDiagonal { value: f64 },
    Distance { scale: f64 },
}

impl KernelSpec {
    pub fn build(&self) -> Kernel {
        match *self {
            KernelSpec::Zero => Kernel::Zero,
            KernelSpec::Constant { value } => Kernel::Constant { value },
            KernelSpec::Gaussian { scale, length } => Kernel::Gaussian { scale, length },
            KernelSpec::Exponential { scale, rate } => Kernel::Exponential { scale, rate },
            KernelSpec::OffDiagonal { value } => Kernel::OffDiagonal { value },
            KernelSpec::Distance { scale } => Kernel::Distance { scale },
        }
    }
}

impl ModelSection {
    pub fn kernels(&self) -> BsKernels {
        BsKernels::new(self.beta.build(), self.pi.build())
    }

    pub fn build_alpha(&self, horizon: f64, seed: u64) -> Result<AlphaFunction, CliError> {
        let a = match &self.alpha {
            AlphaSpec::Constant { value } => AlphaFunction::constant(horizon, *value)?,
            AlphaSpec::Grid { grid, values } => {
                let file = AlphaFile::Grid { grid: grid.clone(), values: values.clone(), horizon: None };
                AlphaFunction::from_file(file, horizon)?
            }
            AlphaSpec::File { path } => {
                if !path.exists() {
                    return Err(CliError::Validation(format!("alpha file {} does not exist", path.display())));
                }
                AlphaFunction::load_json(path, horizon)?
            }
            AlphaSpec::Neural { alpha0, width, pretrain_steps } => {
                mvhjm_core::calibrate::initial_neural_alpha(horizon, *alpha0, *width, *pretrain_steps, seed)?
            }
        };
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractSection {
    /// Start of delivery in years.
    pub tau1: f64,
    pub tau2: f64,
    /// Option exercise time in years.
    pub exercise: f64,
    pub damping: f64,
}

impl Default for ContractSection {
    fn default() -> Self {
        let m = MarketOptions::default();
        Self { tau1: m.tau1, tau2: m.tau2, exercise: m.exercise, damping: 1.0 }
    }
}

impl ContractSection {
    pub fn market_options(&self) -> MarketOptions {
        MarketOptions { tau1: self.tau1, tau2: self.tau2, exercise: self.exercise }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub forward_curve: Option<PathBuf>,
    pub quotes: Option<PathBuf>,
    /// Prices and curve values are divided by this.
    pub day_ahead: f64,
    /// Strikes as fractions of the day-ahead price.
    pub strikes: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            forward_curve: None,
            quotes: None,
            day_ahead: 1.0,
            strikes: (0..10).map(|i| 0.9 + 0.2 * i as f64 / 9.0).collect(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierSection {
    pub lambda_max: f64,
    pub n_lambda: usize,
}

impl Default for FourierSection {
    fn default() -> Self {
        let f = mvhjm_core::FourierConfig::default();
        Self { lambda_max: f.lambda_max, n_lambda: f.n_lambda }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_paths: usize,
    pub n_steps: usize,
    /// End of the path grid; defaults to the exercise time.
    pub end: Option<f64>,
    /// Number of full paths written as CSV.
    pub write_paths: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { n_paths: 1000, n_steps: 100, end: None, write_paths: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionSpec {
    Constant { value: f64 },
    Square,
    Gaussian { scale: f64 },
    Cosine { freq: f64 },
    /// Coefficients in increasing degree; the linear one must be 0.
    Polynomial { coefficients: Vec<f64> },
}

impl TestFunctionSpec {
    pub fn build(&self) -> TestFunction {
        match self {
            TestFunctionSpec::Constant { value } => TestFunction::constant(*value),
            TestFunctionSpec::Square => TestFunction::square(),
            TestFunctionSpec::Gaussian { scale } => TestFunction::gaussian(*scale),
            TestFunctionSpec::Cosine { freq } => TestFunction::cosine(*freq),
            TestFunctionSpec::Polynomial { coefficients } => TestFunction::polynomial(coefficients.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsSection {
    pub test_function: TestFunctionSpec,
    pub order: usize,
    /// Defaults to the exercise time.
    pub t: Option<f64>,
    /// Monte Carlo paths for the estimates reported next to the formulas.
    pub n_paths: usize,
    pub n_quad: usize,
}

impl Default for MomentsSection {
    fn default() -> Self {
        Self { test_function: TestFunctionSpec::Constant { value: 1.0 }, order: 2, t: None, n_paths: 10_000, n_quad: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradModeSpec {
    Backprop,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_mode: GradModeSpec,
    pub fd_step: f64,
    /// 0 disables clipping.
    pub clip_norm: f64,
    pub tolerance: f64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_iters: 300,
            grad_mode: GradModeSpec::Backprop,
            fd_step: 1e-6,
            clip_norm: 10.0,
            tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSection {
    pub n_paths: usize,
    pub n_steps: usize,
    pub end: Option<f64>,
    pub gamma: f64,
    pub threshold: f64,
    pub test_functions: Vec<TestFunctionSpec>,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            n_paths: 5000,
            n_steps: 100,
            end: None,
            gamma: 0.0,
            threshold: mvhjm_core::simulate::DRIFT_Z_THRESHOLD,
            test_functions: vec![
                TestFunctionSpec::Square,
                TestFunctionSpec::Gaussian { scale: 0.5 },
                TestFunctionSpec::Cosine { freq: 2.0 },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmissibilitySection {
    pub samples: usize,
    /// Domain `[0, horizon]` the kernels are checked on.
    pub horizon: f64,
}

impl Default for AdmissibilitySection {
    fn default() -> Self {
        Self { samples: 2000, horizon: 1.0 }
    }
}

/// Parses `section.key=value` (leading dashes allowed). Values are read as
/// TOML when possible and as bare strings otherwise.
///
/// Overriding a `kind` key with a different value empties the enclosing
/// table first, so `--model.alpha.kind=constant --model.alpha.value=0`
/// replaces a file-based alpha.
pub fn parse_override(arg: &str) -> Result<(Vec<String>, Value), CliError> {
    let body = arg.trim_start_matches('-');
    let (key, raw) = body
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{arg}` is not of the form --section.key=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Validation(format!("override `{arg}` has an empty key")));
    }
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_owned()),
    };
    Ok((path, value))
}

pub fn apply_override(table: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("`{}` is not a section", path.join("."))))?;
    }
    // a new variant does not inherit the old variant's fields
    if last == "kind" && cur.get("kind") != Some(&value) {
        cur.clear();
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path`, applies overrides, and resolves relative file paths
    /// against the directory of the config file.
    pub fn load(path: &Path, command: Option<Command>, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut table: Table =
            text.parse().map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))?;
        for o in overrides {
            let (p, v) = parse_override(o)?;
            apply_override(&mut table, &p, v)?;
        }
        if let Some(c) = command {
            table.insert("command".into(), Value::String(c.name().into()));
        }
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.io.forward_curve.as_mut() {
            fix(p);
        }
        if let Some(p) = self.io.quotes.as_mut() {
            fix(p);
        }
        fix(&mut self.io.output_dir);
        if let AlphaSpec::File { path } = &mut self.model.alpha {
            fix(path);
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let needs_curve = !matches!(self.command, Command::CheckAdmissibility);
        if needs_curve {
            match &self.io.forward_curve {
                None => return Err(CliError::Validation("io.forward_curve is required".into())),
                Some(p) if !p.exists() => {
                    return Err(CliError::Validation(format!("forward curve {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if self.command == Command::Calibrate {
            match &self.io.quotes {
                None => return Err(CliError::Validation("io.quotes is required for calibrate".into())),
                Some(p) if !p.exists() => {
                    return Err(CliError::Validation(format!("quotes file {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        let affine_only = matches!(self.command, Command::Price | Command::Calibrate | Command::CheckDrift);
        if affine_only && self.model.kind != ModelKind::Affine {
            return Err(CliError::Validation(format!("`{}` requires model.kind = \"affine\"", self.command.name())));
        }
        if self.threads == Some(0) {
            return Err(CliError::Validation("threads must be >= 1".into()));
        }
        Ok(())
    }
}
