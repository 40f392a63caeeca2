//! Calibration of the branching rate `alpha` to call quotes by gradient
//! descent on the L1 distance between model and market prices.

use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contracts::FutureContract;
use crate::error::{Error, Result};
use crate::measures::{load_forward_curve, DiscreteMeasure, DAYS_PER_YEAR};
use crate::models::{AlphaFunction, MlpAlpha};
use crate::riccati::{FourierConfig, FourierPricer};

/// Strikes above this are taken to be in currency units rather than normalized.
pub const NORMALIZED_STRIKE_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub strike: f64,
    pub price: f64,
}

/// Contract and exercise used when reading market data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketOptions {
    pub tau1: f64,
    pub tau2: f64,
    pub exercise: f64,
}

impl Default for MarketOptions {
    /// One-month delivery starting about 1.33 months ahead, options expiring
    /// 35 days after the quote date.
    fn default() -> Self {
        Self { tau1: 1.33 / 12.0, tau2: 2.33 / 12.0, exercise: 35.0 / DAYS_PER_YEAR }
    }
}

#[derive(Debug, Clone)]
pub struct MarketDataset {
    pub quote_date: Option<NaiveDate>,
    pub day_ahead_price: f64,
    pub forward_curve: DiscreteMeasure,
    /// Ascending in strike.
    pub quotes: Vec<Quote>,
    pub contract: FutureContract,
    pub exercise: f64,
    /// Set when strikes were read in currency units and divided by the day-ahead price.
    pub strikes_rescaled: bool,
}

impl MarketDataset {
    pub fn new(
        forward_curve: DiscreteMeasure,
        mut quotes: Vec<Quote>,
        contract: FutureContract,
        exercise: f64,
    ) -> Result<Self> {
        if quotes.is_empty() {
            return Err(Error::Data("no option quotes".into()));
        }
        for q in &quotes {
            if !(q.price.is_finite() && q.price >= 0.0) {
                return Err(Error::Data(format!("negative or non-finite price {} at strike {}", q.price, q.strike)));
            }
            if !(q.strike.is_finite() && q.strike >= 0.0) {
                return Err(Error::Data(format!("invalid strike {}", q.strike)));
            }
        }
        quotes.sort_by(|a, b| a.strike.total_cmp(&b.strike));
        if exercise > contract.tau1() {
            return Err(Error::ContractExpired { t: exercise, tau1: contract.tau1() });
        }
        contract.check_horizon(forward_curve.horizon())?;
        Ok(Self {
            quote_date: None,
            day_ahead_price: 1.0,
            forward_curve,
            quotes,
            contract,
            exercise,
            strikes_rescaled: false,
        })
    }

    pub fn strikes(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.strike).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.price).collect()
    }
}

/// Loads a forward curve and `strike,price` quotes, normalizing by `day_ahead`.
///
/// Prices and curve values are always divided by `day_ahead`. Strikes are
/// divided too when any of them exceeds [`NORMALIZED_STRIKE_LIMIT`].
pub fn load_market_csv(
    path_curve: &Path,
    path_quotes: &Path,
    day_ahead: f64,
    opts: &MarketOptions,
) -> Result<MarketDataset> {
    if !(day_ahead.is_finite() && day_ahead > 0.0) {
        return Err(Error::Data(format!("day-ahead price must be > 0, got {day_ahead}")));
    }
    let contract = FutureContract::uniform(opts.tau1, opts.tau2)?;
    let curve = load_forward_curve(path_curve, opts.tau2, day_ahead)?;
    let quotes = read_quotes(path_quotes)?;
    let rescale = quotes.iter().any(|q| q.strike > NORMALIZED_STRIKE_LIMIT);
    if rescale {
        log::warn!("strikes above {NORMALIZED_STRIKE_LIMIT} found; dividing all strikes by {day_ahead}");
    }
    let quotes = quotes
        .into_iter()
        .map(|q| Quote { strike: if rescale { q.strike / day_ahead } else { q.strike }, price: q.price / day_ahead })
        .collect();
    let mut d = MarketDataset::new(curve.measure, quotes, contract, opts.exercise)?;
    d.quote_date = curve.reference_date;
    d.day_ahead_price = day_ahead;
    d.strikes_rescaled = rescale;
    Ok(d)
}

/// Reads a `strike,price` file without any normalization.
pub fn read_quotes(path: &Path) -> Result<Vec<Quote>> {
    let parse = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse(format!("{other:?}")),
    })?;
    let headers: Vec<String> = r.headers().map_err(|e| parse(e.to_string()))?.iter().map(str::to_ascii_lowercase).collect();
    if headers != ["strike", "price"] {
        return Err(parse(format!("expected header `strike,price`, got {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in r.deserialize::<Quote>() {
        out.push(rec.map_err(|e| parse(e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{} contains no quotes", path.display())));
    }
    if let Some(q) = out.iter().find(|q| q.price < 0.0) {
        return Err(Error::Data(format!("negative price {} at strike {}", q.price, q.strike)));
    }
    Ok(out)
}

pub fn write_quotes(path: &Path, quotes: &[Quote]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    w.write_record(["strike", "price"]).map_err(|e| Error::Io(e.into()))?;
    for q in quotes {
        w.write_record([format!("{:.17e}", q.strike), format!("{:.17e}", q.price)]).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GradMode {
    FiniteDifference { h: f64 },
    Backprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_mode: GradMode,
    pub fourier: FourierConfig,
    pub seed: u64,
    /// Gradients longer than this are rescaled to this norm.
    pub clip_norm: Option<f64>,
    /// Stop once the mean absolute error is at or below this value.
    pub tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_iters: 300,
            grad_mode: GradMode::Backprop,
            fourier: FourierConfig::default(),
            seed: 0,
            clip_norm: Some(10.0),
            tolerance: 0.0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Domain(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.max_iters == 0 {
            return Err(Error::Domain("max_iters must be >= 1".into()));
        }
        if let GradMode::FiniteDifference { h } = self.grad_mode {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Domain(format!("finite-difference step must be > 0, got {h}")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Domain(format!("clip norm must be > 0, got {c}")));
            }
        }
        self.fourier.validate()
    }
}

fn pricer(a: &AlphaFunction, d: &MarketDataset, cfg: &CalibrationConfig) -> Result<FourierPricer> {
    FourierPricer::new(&d.forward_curve, &d.contract, d.exercise, a, &cfg.fourier)
}

/// Model call prices at the dataset strikes on a shared lambda grid.
pub fn price_vector(a: &AlphaFunction, d: &MarketDataset, cfg: &CalibrationConfig) -> Result<Vec<f64>> {
    let p = pricer(a, d, cfg)?;
    d.quotes.iter().map(|q| p.price(q.strike)).collect()
}

/// `sum_K |model(K) - market(K)|`.
pub fn l1_loss(model: &[f64], market: &[f64]) -> Result<f64> {
    if model.len() != market.len() {
        return Err(Error::Shape(format!("{} model prices vs {} market prices", model.len(), market.len())));
    }
    Ok(model.iter().zip(market).map(|(a, b)| (a - b).abs()).sum())
}

/// Loss and its gradient with respect to the parameters of `a`.
pub fn loss_and_gradient(a: &AlphaFunction, d: &MarketDataset, cfg: &CalibrationConfig) -> Result<(f64, Vec<f64>)> {
    match cfg.grad_mode {
        GradMode::Backprop => {
            let p = pricer(a, d, cfg)?;
            let tau = d.exercise;
            let mut loss = 0.0;
            let mut terms = Vec::new();
            for q in &d.quotes {
                let (model, grads) = p.price_and_window_gradient(q.strike);
                p.price(q.strike)?;
                let diff = model - q.price;
                loss += diff.abs();
                let s = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                if s == 0.0 {
                    continue;
                }
                for (x, g) in grads {
                    // window = A(x) - A(x - tau), since delivery starts after exercise
                    terms.push((x, s * g));
                    terms.push((x - tau, -s * g));
                }
            }
            Ok((loss, a.primitive_gradient(&terms)))
        }
        GradMode::FiniteDifference { h } => {
            let loss = l1_loss(&price_vector(a, d, cfg)?, &d.prices())?;
            let params = a.params();
            let grad = (0..params.len())
                .into_par_iter()
                .map(|j| {
                    let mut up = params.clone();
                    up[j] += h;
                    let mut dn = params.clone();
                    dn[j] -= h;
                    let lu = l1_loss(&price_vector(&a.with_params(&up)?, d, cfg)?, &d.prices())?;
                    let ld = l1_loss(&price_vector(&a.with_params(&dn)?, d, cfg)?, &d.prices())?;
                    Ok((lu - ld) / (2.0 * h))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((loss, grad))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeError {
    pub strike: f64,
    pub market: f64,
    pub model: f64,
    pub abs: f64,
    pub rel: f64,
    pub sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    /// Iteration whose parameters are returned.
    pub best_iteration: usize,
    pub final_loss: f64,
    pub mean_abs_error: f64,
    pub mean_rel_error: f64,
    pub mean_sq_error: f64,
    pub strikes_rescaled: bool,
    pub grad_mode: GradMode,
    pub learning_rate: f64,
    pub per_strike: Vec<StrikeError>,
}

impl CalibrationReport {
    pub fn from_prices(strikes: &[f64], market: &[f64], model: &[f64]) -> Self {
        let per_strike: Vec<StrikeError> = strikes
            .iter()
            .zip(market.iter().zip(model))
            .map(|(&strike, (&market, &model))| {
                let abs = (model - market).abs();
                let rel = if market > 0.0 { abs / market } else { 0.0 };
                StrikeError { strike, market, model, abs, rel, sq: abs * abs }
            })
            .collect();
        let n = per_strike.len().max(1) as f64;
        Self {
            loss_trace: Vec::new(),
            iterations: 0,
            best_iteration: 0,
            final_loss: per_strike.iter().map(|e| e.abs).sum(),
            mean_abs_error: per_strike.iter().map(|e| e.abs).sum::<f64>() / n,
            mean_rel_error: per_strike.iter().map(|e| e.rel).sum::<f64>() / n,
            mean_sq_error: per_strike.iter().map(|e| e.sq).sum::<f64>() / n,
            strikes_rescaled: false,
            grad_mode: GradMode::Backprop,
            learning_rate: 0.0,
            per_strike,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub alpha: AlphaFunction,
    pub loss_trace: Vec<f64>,
    pub report: CalibrationReport,
}

/// Gradient descent with a fixed learning rate. The loss is recorded at every
/// iterate and the iterate with the smallest loss is returned.
pub fn calibrate(d: &MarketDataset, init: &AlphaFunction, cfg: &CalibrationConfig) -> Result<CalibrationOutcome> {
    cfg.validate()?;
    let n = d.quotes.len() as f64;
    let mut alpha = init.clone();
    let mut trace = Vec::with_capacity(cfg.max_iters + 1);
    let mut best = (f64::INFINITY, 0, init.clone());
    for it in 0..=cfg.max_iters {
        let (loss, mut grad) = loss_and_gradient(&alpha, d, cfg)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                message: "non-finite loss or gradient; try a different initialization".into(),
            });
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, it, alpha.clone());
        }
        if loss / n <= cfg.tolerance || it == cfg.max_iters {
            break;
        }
        if let Some(c) = cfg.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                grad.iter_mut().for_each(|g| *g *= c / norm);
            }
        }
        let params: Vec<f64> = alpha.params().iter().zip(&grad).map(|(p, g)| p - cfg.learning_rate * g).collect();
        alpha = alpha.with_params(&params).map_err(|e| Error::Divergence { iteration: it, message: e.to_string() })?;
    }
    let (_, best_it, alpha) = best;
    let model = price_vector(&alpha, d, cfg)?;
    let mut report = CalibrationReport::from_prices(&d.strikes(), &d.prices(), &model);
    report.loss_trace = trace.clone();
    report.iterations = trace.len() - 1;
    report.best_iteration = best_it;
    report.strikes_rescaled = d.strikes_rescaled;
    report.grad_mode = cfg.grad_mode;
    report.learning_rate = cfg.learning_rate;
    Ok(CalibrationOutcome { alpha, loss_trace: trace, report })
}

/// Network `alpha` fitted by `steps` gradient steps to the constant `alpha0`
/// before any price fitting.
pub fn initial_neural_alpha(horizon: f64, alpha0: f64, width: usize, steps: usize, seed: u64) -> Result<AlphaFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MlpAlpha::initialized(width, horizon, alpha0, &mut rng)?;
    const POINTS: usize = 64;
    const LR: f64 = 0.01;
    for _ in 0..steps {
        let mut grad = vec![0.0; net.n_params()];
        for j in 0..POINTS {
            let x = horizon * j as f64 / (POINTS - 1) as f64;
            // relative squared error keeps the step size independent of alpha0
            let r = net.forward(x) / alpha0 - 1.0;
            net.accumulate_gradient(x, 2.0 * r / alpha0 / POINTS as f64, &mut grad);
        }
        let p: Vec<f64> = net.params().iter().zip(&grad).map(|(p, g)| p - LR * g).collect();
        net.set_params(&p)?;
    }
    AlphaFunction::neural(horizon, net)
}
