//! Delivery-period futures priced as integrals of the forward measure.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Grid used to make `(tau1, tau2]` membership deterministic.
pub const BOUNDARY_GRID: f64 = 1e-12;

#[inline]
fn snap(u: f64) -> f64 {
    (u / BOUNDARY_GRID).round() * BOUNDARY_GRID
}

/// Whether delivery time `u` falls in `(tau1, tau2]`.
#[inline]
pub fn in_delivery(u: f64, tau1: f64, tau2: f64) -> bool {
    let u = snap(u);
    u > snap(tau1) && u <= snap(tau2)
}

#[derive(Clone)]
pub enum WeightKind {
    /// `w(u) = 1 / (tau2 - tau1)`.
    UniformAverage,
    /// Weight as a function of the delivery time `u`.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightKind::UniformAverage => f.write_str("UniformAverage"),
            WeightKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FutureContract {
    tau1: f64,
    tau2: f64,
    weight: WeightKind,
}

impl FutureContract {
    pub fn new(tau1: f64, tau2: f64, weight: WeightKind) -> Result<Self> {
        if !(tau1.is_finite() && tau2.is_finite() && tau1 >= 0.0 && tau1 < tau2) {
            return Err(Error::Domain(format!("need 0 <= tau1 < tau2, got ({tau1}, {tau2}]")));
        }
        if let WeightKind::Custom(w) = &weight {
            for k in 0..=16 {
                let u = tau1 + (tau2 - tau1) * k as f64 / 16.0;
                if !w(u).is_finite() {
                    return Err(Error::Evaluation(format!("weight function is not finite at u = {u}")));
                }
            }
        }
        Ok(Self { tau1, tau2, weight })
    }

    pub fn uniform(tau1: f64, tau2: f64) -> Result<Self> {
        Self::new(tau1, tau2, WeightKind::UniformAverage)
    }

    /// Checks the contract fits the domain of a measure.
    pub fn check_horizon(&self, horizon: f64) -> Result<()> {
        if self.tau2 > horizon + BOUNDARY_GRID {
            return Err(Error::Domain(format!("tau2 = {} exceeds the horizon {horizon}", self.tau2)));
        }
        Ok(())
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn weight_kind(&self) -> &WeightKind {
        &self.weight
    }

    /// `w(u; tau1, tau2)`, without the delivery indicator.
    #[inline]
    pub fn weight(&self, u: f64) -> f64 {
        match &self.weight {
            WeightKind::UniformAverage => 1.0 / (self.tau2 - self.tau1),
            WeightKind::Custom(w) => w(u),
        }
    }

    /// `w(u) 1_{(tau1, tau2]}(u)`.
    #[inline]
    pub fn delivery_weight(&self, u: f64) -> f64 {
        if in_delivery(u, self.tau1, self.tau2) {
            self.weight(u)
        } else {
            0.0
        }
    }

    /// Largest weight over the delivery period (probed on a grid for custom weights).
    pub fn max_weight(&self) -> f64 {
        match &self.weight {
            WeightKind::UniformAverage => 1.0 / (self.tau2 - self.tau1),
            WeightKind::Custom(w) => (0..=256)
                .map(|k| w(self.tau1 + (self.tau2 - self.tau1) * k as f64 / 256.0).abs())
                .fold(0.0, f64::max),
        }
    }
}

/// Option on a future, exercised at `exercise <= tau1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub exercise: f64,
    /// Exponential damping: positive prices calls, negative prices puts.
    pub damping: f64,
}

impl OptionSpec {
    pub fn new(strike: f64, exercise: f64, damping: f64) -> Result<Self> {
        if !(strike.is_finite() && strike >= 0.0) {
            return Err(Error::Domain(format!("strike must be >= 0, got {strike}")));
        }
        if !(exercise.is_finite() && exercise >= 0.0) {
            return Err(Error::Domain(format!("exercise time must be >= 0, got {exercise}")));
        }
        if !(damping.is_finite() && damping != 0.0) {
            return Err(Error::Domain(format!("damping must be non-zero, got {damping}")));
        }
        Ok(Self { strike, exercise, damping })
    }

    pub fn check_contract(&self, contract: &FutureContract) -> Result<()> {
        if self.exercise > contract.tau1() {
            return Err(Error::ContractExpired { t: self.exercise, tau1: contract.tau1() });
        }
        Ok(())
    }
}

/// `F(t, tau1, tau2) = sum_i w(t + x_i) 1_{(tau1, tau2]}(t + x_i) w_i`.
pub fn future_price(mu: &DiscreteMeasure, t: f64, contract: &FutureContract) -> Result<f64> {
    if t > contract.tau1 {
        return Err(Error::ContractExpired { t, tau1: contract.tau1 });
    }
    Ok(mu
        .atoms()
        .iter()
        .map(|a| contract.delivery_weight(t + a.x) * a.weight)
        .sum())
}

/// Future price when maturities and time are both integers `0..=T`.
pub fn future_price_discrete<W: Fn(usize) -> f64>(
    mu: &[f64],
    t: usize,
    tau1: usize,
    tau2: usize,
    w: W,
) -> Result<f64> {
    let Some(horizon) = mu.len().checked_sub(1) else {
        return Err(Error::Domain("empty state vector".into()));
    };
    if !(t <= tau1 && tau1 < tau2 && tau2 <= horizon) {
        return Err(Error::Domain(format!(
            "need t <= tau1 < tau2 <= {horizon}, got t = {t}, ({tau1}, {tau2}]"
        )));
    }
    if let Some(v) = mu.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain(format!("state components must be >= 0, got {v}")));
    }
    Ok(mu
        .iter()
        .enumerate()
        .filter(|&(i, _)| t + i > tau1 && t + i <= tau2)
        .map(|(i, m)| w(t + i) * m)
        .sum())
}

/// Price of the joint delivery over consecutive periods, accumulated period by
/// period with the weight of the joint contract `(tau_1, tau_n]`.
pub fn cumulative_delivery(
    mu: &DiscreteMeasure,
    t: f64,
    periods: &[(f64, f64)],
    weight: WeightKind,
) -> Result<f64> {
    let (Some(first), Some(last)) = (periods.first(), periods.last()) else {
        return Err(Error::Partition("no delivery periods".into()));
    };
    for (k, p) in periods.iter().enumerate() {
        if !(p.0 < p.1) {
            return Err(Error::Partition(format!("period {k} is empty: ({}, {}]", p.0, p.1)));
        }
        if k > 0 && snap(periods[k - 1].1) != snap(p.0) {
            return Err(Error::Partition(format!(
                "period {k} starts at {} but the previous one ends at {}",
                p.0,
                periods[k - 1].1
            )));
        }
    }
    let joint = FutureContract::new(first.0, last.1, weight)?;
    if t > joint.tau1() {
        return Err(Error::ContractExpired { t, tau1: joint.tau1() });
    }
    let mut total = 0.0;
    for &(a, b) in periods {
        total += mu
            .atoms()
            .iter()
            .filter(|atom| in_delivery(t + atom.x, a, b))
            .map(|atom| joint.weight(t + atom.x) * atom.weight)
            .sum::<f64>();
    }
    Ok(total)
}
