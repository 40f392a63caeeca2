//! Affine-model analytics: the closed-form solution of the Riccati transport
//! equation `d/dt psi = -psi' + alpha psi^2 / 2`, the exponential-affine
//! Laplace transform it induces, and damped Fourier pricing of options on
//! delivery-period futures.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contracts::{in_delivery, FutureContract, OptionSpec};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, TestFunction};
use crate::models::AlphaFunction;

/// Smallest admissible `|1 - g I / 2|` before reporting a blow-up.
pub const DENOMINATOR_FLOOR: f64 = 1e-10;
/// Margin kept below 1 in the damping validity condition.
pub const DAMPING_MARGIN: f64 = 1e-6;
/// Relative tolerance on the imaginary part of a Fourier price.
pub const IMAGINARY_TOLERANCE: f64 = 1e-6;

/// `psi_t(x)` for a fixed initial condition and branching rate.
#[derive(Clone)]
pub struct RiccatiSolution<'a> {
    g: Arc<dyn Fn(f64) -> Complex64 + Send + Sync>,
    alpha: &'a AlphaFunction,
}

impl<'a> RiccatiSolution<'a> {
    pub fn real(g: &TestFunction, alpha: &'a AlphaFunction) -> Self {
        let g = g.clone();
        Self { g: Arc::new(move |x| Complex64::new(g.eval(x), 0.0)), alpha }
    }

    pub fn complex<G: Fn(f64) -> Complex64 + Send + Sync + 'static>(g: G, alpha: &'a AlphaFunction) -> Self {
        Self { g: Arc::new(g), alpha }
    }

    /// `g((x-t)^+) / (1 - g((x-t)^+) int_0^t alpha((x-s)^+) ds / 2)`.
    pub fn eval(&self, t: f64, x: f64) -> Result<Complex64> {
        let g = (self.g)((x - t).max(0.0));
        let accumulated = self.alpha.transported_integral(x, t)?;
        let den = 1.0 - 0.5 * g * accumulated;
        if den.norm() <= DENOMINATOR_FLOOR {
            return Err(Error::RiccatiBlowup { t, x, denominator: den.norm() });
        }
        Ok(g / den)
    }
}

/// Real-valued solution for a real initial condition.
pub fn riccati_psi(g: &TestFunction, alpha: &AlphaFunction, t: f64, x: f64) -> Result<f64> {
    Ok(RiccatiSolution::real(g, alpha).eval(t, x)?.re)
}

/// `E[exp <g, mu_{s+dt}> | mu_s] = exp <psi_dt, mu_s>`.
pub fn laplace_transform(mu_s: &DiscreteMeasure, g: &TestFunction, alpha: &AlphaFunction, dt: f64) -> Result<f64> {
    let psi = RiccatiSolution::real(g, alpha);
    let mut exponent = 0.0;
    for a in mu_s.atoms() {
        exponent += a.weight * psi.eval(dt, a.x)?.re;
    }
    Ok(exponent.exp())
}

/// Fourier-Laplace transform with a complex initial condition.
pub fn laplace_transform_complex(mu_s: &DiscreteMeasure, psi: &RiccatiSolution<'_>, dt: f64) -> Result<Complex64> {
    let mut exponent = Complex64::new(0.0, 0.0);
    for a in mu_s.atoms() {
        exponent += a.weight * psi.eval(dt, a.x)?;
    }
    Ok(exponent.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierConfig {
    pub damping: f64,
    /// The grid is `[-lambda_max, lambda_max]`.
    pub lambda_max: f64,
    pub n_lambda: usize,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self { damping: 1.0, lambda_max: 100.0, n_lambda: 4001 }
    }
}

impl FourierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping.is_finite() && self.damping != 0.0) {
            return Err(Error::Domain(format!("damping must be non-zero, got {}", self.damping)));
        }
        if !(self.lambda_max.is_finite() && self.lambda_max > 0.0) {
            return Err(Error::Domain(format!("lambda_max must be > 0, got {}", self.lambda_max)));
        }
        if self.n_lambda < 2 {
            return Err(Error::Domain("need at least 2 lambda nodes".into()));
        }
        Ok(())
    }

    pub fn with_damping(self, damping: f64) -> Self {
        Self { damping, ..self }
    }

    fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 2.0 * self.lambda_max / (self.n_lambda - 1) as f64;
        (0..self.n_lambda).map(move |k| {
            let end = k == 0 || k + 1 == self.n_lambda;
            (-self.lambda_max + k as f64 * h, if end { 0.5 * h } else { h })
        })
    }
}

/// `psi_tau^lambda(x)` for the delivery payoff of `contract`, evaluated on an
/// initial maturity `x`: `2 z w(x) / (2 - z w(x) (A(x) - A(x - tau)))` on
/// `(tau1, tau2]`, zero elsewhere, with `z = C + i lambda`.
pub fn psi_fourier(
    lambda: f64,
    spec: &OptionSpec,
    contract: &FutureContract,
    alpha: &AlphaFunction,
    x: f64,
) -> Result<Complex64> {
    if !(x.is_finite() && (0.0..=alpha.horizon()).contains(&x)) {
        return Err(Error::Domain(format!("x = {x} outside [0, {}]", alpha.horizon())));
    }
    spec.check_contract(contract)?;
    if !in_delivery(x, contract.tau1(), contract.tau2()) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let z = Complex64::new(spec.damping, lambda);
    let w = contract.weight(x);
    let window = alpha.transported_integral_unchecked(x, spec.exercise);
    let den = 2.0 - z * w * window;
    if den.norm() <= DENOMINATOR_FLOOR {
        return Err(Error::RiccatiBlowup { t: spec.exercise, x, denominator: den.norm() });
    }
    Ok(2.0 * z * w / den)
}

/// One atom of the initial curve that delivers in `(tau1, tau2]`.
#[derive(Debug, Clone, Copy)]
struct DeliveryAtom {
    x: f64,
    mass: f64,
    weight: f64,
    /// `A(x) - A(x - tau)`.
    window: f64,
}

/// Strike-independent part of the Fourier price: the characteristic function
/// of `F(tau, tau1, tau2)` on the lambda grid.
pub struct FourierPricer {
    damping: f64,
    exercise: f64,
    atoms: Vec<DeliveryAtom>,
    nodes: Vec<(f64, f64)>,
    /// `E[exp(z F)]` minus its large-`|lambda|` limit, per node.
    remainder: Vec<Complex64>,
    /// Limit of the characteristic function: `c_inf * exp(z f_det)`.
    c_inf: f64,
    f_det: f64,
}

impl FourierPricer {
    pub fn new(
        mu0: &DiscreteMeasure,
        contract: &FutureContract,
        exercise: f64,
        alpha: &AlphaFunction,
        cfg: &FourierConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if exercise > contract.tau1() {
            return Err(Error::ContractExpired { t: exercise, tau1: contract.tau1() });
        }
        if !(exercise >= 0.0) {
            return Err(Error::Domain(format!("exercise time must be >= 0, got {exercise}")));
        }
        let atoms: Vec<DeliveryAtom> = mu0
            .atoms()
            .iter()
            .filter(|a| a.weight > 0.0 && in_delivery(a.x, contract.tau1(), contract.tau2()))
            .map(|a| DeliveryAtom {
                x: a.x,
                mass: a.weight,
                weight: contract.weight(a.x),
                window: alpha.transported_integral_unchecked(a.x, exercise),
            })
            .collect();
        let c = cfg.damping;
        for a in &atoms {
            let bound = 0.5 * c * a.weight * a.window;
            if bound >= 1.0 - DAMPING_MARGIN {
                return Err(Error::DampingTooLarge { damping: c, bound, x: a.x });
            }
        }

        // As |lambda| grows, exp(mass psi) tends to exp(-2 mass / window) for
        // branching atoms and stays exp(z w mass) for the others.
        let mut log_c_inf = 0.0;
        let mut f_det = 0.0;
        for a in &atoms {
            if a.window > 0.0 {
                log_c_inf -= 2.0 * a.mass / a.window;
            } else {
                f_det += a.weight * a.mass;
            }
        }
        let c_inf = log_c_inf.exp();

        let nodes: Vec<(f64, f64)> = cfg.nodes().collect();
        let remainder = nodes
            .par_iter()
            .map(|&(lambda, _)| {
                let z = Complex64::new(c, lambda);
                let mut exponent = Complex64::new(0.0, 0.0);
                for a in &atoms {
                    let zw = z * a.weight;
                    exponent += a.mass * 2.0 * zw / (2.0 - zw * a.window);
                }
                let limit = c_inf * (z * f_det).exp();
                let cf = exponent.exp();
                if (cf - limit).norm() <= 1e-15 * cf.norm() {
                    Complex64::new(0.0, 0.0)
                } else {
                    cf - limit
                }
            })
            .collect();
        Ok(Self { damping: c, exercise, atoms, nodes, remainder, c_inf, f_det })
    }

    pub fn exercise(&self) -> f64 {
        self.exercise
    }

    /// Forward price `F(0, tau1, tau2)` from the same atoms.
    pub fn forward(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.mass).sum()
    }

    /// Call price for `damping > 0`, put price for `damping < 0`, before
    /// flooring at zero: `(real, imaginary residual)`.
    pub fn raw_price(&self, strike: f64) -> (f64, f64) {
        let c = self.damping;
        let mut acc = Complex64::new(0.0, 0.0);
        for (&(lambda, h), r) in self.nodes.iter().zip(&self.remainder) {
            if r.norm_sqr() == 0.0 {
                continue;
            }
            let z = Complex64::new(c, lambda);
            acc += h * (-z * strike).exp() / (z * z) * r;
        }
        acc /= 2.0 * PI;
        let intrinsic = if c > 0.0 { (self.f_det - strike).max(0.0) } else { (strike - self.f_det).max(0.0) };
        (self.c_inf * intrinsic + acc.re, acc.im)
    }

    pub fn price(&self, strike: f64) -> Result<f64> {
        let (re, im) = self.raw_price(strike);
        if im.abs() > IMAGINARY_TOLERANCE * (1.0 + re.abs()) {
            return Err(Error::QuadratureWarning { real: re, imag: im });
        }
        Ok(re.max(0.0))
    }

    /// Price and its derivative with respect to each delivering atom's
    /// accumulated rate `A(x) - A(x - tau)`, returned as `(x, d price / d window)`.
    pub fn price_and_window_gradient(&self, strike: f64) -> (f64, Vec<(f64, f64)>) {
        let c = self.damping;
        let (re, _) = self.raw_price(strike);
        if re <= 0.0 {
            return (0.0, self.atoms.iter().map(|a| (a.x, 0.0)).collect());
        }
        let mut grads = vec![Complex64::new(0.0, 0.0); self.atoms.len()];
        let mut limit_weight = Complex64::new(0.0, 0.0);
        for &(lambda, h) in &self.nodes {
            let z = Complex64::new(c, lambda);
            let payoff = h * (-z * strike).exp() / (z * z);
            let mut exponent = Complex64::new(0.0, 0.0);
            let mut psis = Vec::with_capacity(self.atoms.len());
            for a in &self.atoms {
                let zw = z * a.weight;
                let psi = 2.0 * zw / (2.0 - zw * a.window);
                exponent += a.mass * psi;
                psis.push(psi);
            }
            let cf = exponent.exp();
            for (g, (a, psi)) in grads.iter_mut().zip(self.atoms.iter().zip(&psis)) {
                *g += payoff * cf * a.mass * 0.5 * psi * psi;
            }
            limit_weight += payoff * (z * self.f_det).exp();
        }
        let intrinsic = if c > 0.0 { (self.f_det - strike).max(0.0) } else { (strike - self.f_det).max(0.0) };
        // the limit term enters once analytically and once subtracted under the integral
        let limit_total = intrinsic - (limit_weight / (2.0 * PI)).re;
        let out = self
            .atoms
            .iter()
            .zip(grads)
            .map(|(a, g)| {
                let d_cinf = if a.window > 0.0 { self.c_inf * 2.0 * a.mass / (a.window * a.window) } else { 0.0 };
                (a.x, (g / (2.0 * PI)).re + d_cinf * limit_total)
            })
            .collect();
        (re, out)
    }
}

/// Price of a call (or put, for negative damping) on `F(tau, tau1, tau2)`.
pub fn fourier_call_price(
    mu0: &DiscreteMeasure,
    contract: &FutureContract,
    spec: &OptionSpec,
    alpha: &AlphaFunction,
    cfg: &FourierConfig,
) -> Result<f64> {
    spec.check_contract(contract)?;
    let cfg = cfg.with_damping(spec.damping);
    FourierPricer::new(mu0, contract, spec.exercise, alpha, &cfg)?.price(spec.strike)
}
