//! Covariance kernel `beta` and jump kernel `pi` of a Black-Scholes-type model.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probe grid size per axis for kernel bounds.
pub const BOUND_PROBE: usize = 64;
/// Safety factor applied to probed kernel bounds.
pub const BOUND_SAFETY: f64 = 1.5;
/// Largest matrix size drawn by the admissibility check.
pub const MAX_ADMISSIBILITY_DIM: usize = 8;
pub const PSD_TOLERANCE: f64 = -1e-9;

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Zero,
    Constant { value: f64 },
    /// `scale * exp(-(x - y)^2 / length^2)`.
    Gaussian { scale: f64, length: f64 },
    /// `scale * exp(-rate |x - y|)`.
    Exponential { scale: f64, rate: f64 },
    /// `value` off the diagonal, zero on it.
    OffDiagonal { value: f64 },
    /// `scale * |x - y|`.
    Distance { scale: f64 },
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Zero => f.write_str("Zero"),
            Kernel::Constant { value } => write!(f, "Constant({value})"),
            Kernel::Gaussian { scale, length } => write!(f, "Gaussian({scale}, {length})"),
            Kernel::Exponential { scale, rate } => write!(f, "Exponential({scale}, {rate})"),
            Kernel::OffDiagonal { value } => write!(f, "OffDiagonal({value})"),
            Kernel::Distance { scale } => write!(f, "Distance({scale})"),
            Kernel::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Kernel {
    pub fn custom<F: Fn(f64, f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Kernel::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Constant { value } => *value,
            Kernel::Gaussian { scale, length } => scale * (-((x - y) / length).powi(2)).exp(),
            Kernel::Exponential { scale, rate } => scale * (-rate * (x - y).abs()).exp(),
            Kernel::OffDiagonal { value } => {
                if x == y {
                    0.0
                } else {
                    *value
                }
            }
            Kernel::Distance { scale } => scale * (x - y).abs(),
            Kernel::Custom(f) => f(x, y),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Kernel::Zero)
    }

    /// `sup |k|` probed on a grid over `[0, T]^2`, times [`BOUND_SAFETY`].
    pub fn sup_bound(&self, horizon: f64) -> Result<f64> {
        let n = BOUND_PROBE;
        let mut sup: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = horizon * i as f64 / (n - 1) as f64;
                let y = horizon * j as f64 / (n - 1) as f64;
                let v = self.eval(x, y);
                if !v.is_finite() {
                    return Err(Error::KernelBound(format!("{self:?} is not finite at ({x}, {y})")));
                }
                sup = sup.max(v.abs());
            }
        }
        Ok(sup * BOUND_SAFETY)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BsKernels {
    pub beta: Kernel,
    pub pi: Kernel,
}

impl BsKernels {
    pub fn new(beta: Kernel, pi: Kernel) -> Self {
        Self { beta, pi }
    }

    /// `Q2(g (x) g)(x, y) = (pi(x,y) g(x)^2 + pi(y,x) g(y)^2 + 2 beta(x,y) g(x) g(y)) / 2`.
    #[inline]
    pub fn q2(&self, gx: f64, gy: f64, x: f64, y: f64) -> f64 {
        0.5 * (self.pi.eval(x, y) * gx * gx + self.pi.eval(y, x) * gy * gy + 2.0 * self.beta.eval(x, y) * gx * gy)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub pass: bool,
    pub samples: usize,
    /// Smallest eigenvalue seen over all sampled matrices.
    pub min_eigenvalue: f64,
    /// Human-readable descriptions of the first violations found.
    pub witnesses: Vec<String>,
}

/// Randomized check of the `(beta, pi)` conditions.
///
/// Each sample draws `n <= 8` points in `[0, T]` and positive weights `c`,
/// then checks symmetry and sign conditions at those points and that
/// `beta_n + diag(sum_j c_j / c_i pi(x_i, x_j))` is positive semidefinite.
pub fn check_admissibility(k: &BsKernels, horizon: f64, n_samples: usize, seed: u64) -> Result<AdmissibilityReport> {
    if n_samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Domain(format!("horizon must be > 0, got {horizon}")));
    }
    const MAX_WITNESSES: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut witnesses = Vec::new();
    let mut min_eig = f64::INFINITY;
    let note = |w: &mut Vec<String>, s: String| {
        if w.len() < MAX_WITNESSES {
            w.push(s);
        }
    };
    for _ in 0..n_samples {
        let n = rng.random_range(1..=MAX_ADMISSIBILITY_DIM);
        let xs: Vec<f64> = (0..n).map(|_| horizon * rng.random::<f64>()).collect();
        let cs: Vec<f64> = (0..n).map(|_| (rng.random_range(-2.0..2.0f64)).exp()).collect();
        for (i, &x) in xs.iter().enumerate() {
            let bxx = k.beta.eval(x, x);
            if !(bxx >= 0.0) {
                note(&mut witnesses, format!("beta({x}, {x}) = {bxx} < 0"));
            }
            let pxx = k.pi.eval(x, x);
            if !(pxx.abs() <= 1e-12) {
                note(&mut witnesses, format!("pi({x}, {x}) = {pxx} != 0"));
            }
            for &y in &xs[i + 1..] {
                let (bxy, byx) = (k.beta.eval(x, y), k.beta.eval(y, x));
                if !((bxy - byx).abs() <= 1e-12 * (1.0 + bxy.abs())) {
                    note(&mut witnesses, format!("beta not symmetric at ({x}, {y}): {bxy} vs {byx}"));
                }
                for (p, q) in [(x, y), (y, x)] {
                    let v = k.pi.eval(p, q);
                    if !(v >= 0.0) {
                        note(&mut witnesses, format!("pi({p}, {q}) = {v} < 0"));
                    }
                }
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| {
            let b = 0.5 * (k.beta.eval(xs[i], xs[j]) + k.beta.eval(xs[j], xs[i]));
            if i == j {
                b + (0..n).map(|l| cs[l] / cs[i] * k.pi.eval(xs[i], xs[l])).sum::<f64>()
            } else {
                b
            }
        });
        if m.iter().any(|v| !v.is_finite()) {
            note(&mut witnesses, format!("non-finite kernel values at {xs:?}"));
            continue;
        }
        let eig = SymmetricEigen::new(m).eigenvalues.min();
        min_eig = min_eig.min(eig);
        if eig < PSD_TOLERANCE {
            note(&mut witnesses, format!("matrix at x = {xs:?}, c = {cs:?} has eigenvalue {eig:e}"));
        }
    }
    Ok(AdmissibilityReport { pass: witnesses.is_empty(), samples: n_samples, min_eigenvalue: min_eig, witnesses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(beta: Kernel, pi: Kernel) -> AdmissibilityReport {
        check_admissibility(&BsKernels::new(beta, pi), 1.0, 200, 42).unwrap()
    }

    #[test]
    fn gaussian_kernel_is_admissible() {
        let r = check(Kernel::Gaussian { scale: 1.0, length: 1.0 }, Kernel::Zero);
        assert!(r.pass, "{:?}", r.witnesses);
        assert!(r.min_eigenvalue >= PSD_TOLERANCE);
    }

    #[test]
    fn negative_diagonal_fails() {
        let r = check(Kernel::Constant { value: -1.0 }, Kernel::Zero);
        assert!(!r.pass);
        assert!(r.witnesses[0].contains("beta("));
    }

    #[test]
    fn jump_kernel_must_vanish_on_diagonal() {
        let r = check(Kernel::Zero, Kernel::Constant { value: 0.1 });
        assert!(!r.pass);
        assert!(r.witnesses.iter().any(|w| w.contains("pi(")));
        let ok = check(Kernel::Constant { value: 0.2 }, Kernel::OffDiagonal { value: 0.3 });
        assert!(ok.pass, "{:?}", ok.witnesses);
    }

    #[test]
    fn asymmetric_beta_fails() {
        let r = check(Kernel::custom(|x, y| 1.0 + x - 0.5 * y), Kernel::Zero);
        assert!(!r.pass);
    }

    #[test]
    fn indefinite_beta_fails() {
        // symmetric with non-negative diagonal but not positive semidefinite
        let r = check(Kernel::custom(|x, y| (3.0 * (x - y)).cos() - 0.9 * (x - y).abs().min(1.0) * 4.0), Kernel::Zero);
        assert!(!r.pass);
    }

    #[test]
    fn bounds_and_q2() {
        assert_eq!(Kernel::Constant { value: -2.0 }.sup_bound(1.0).unwrap(), 3.0);
        assert!(Kernel::custom(|x, y| 1.0 / (x - y)).sup_bound(1.0).is_err());
        let k = BsKernels::new(Kernel::Constant { value: 0.7 }, Kernel::Zero);
        assert_eq!(k.q2(1.0, 1.0, 0.2, 0.3), 0.7);
    }

    #[test]
    fn zero_samples_rejected() {
        let k = BsKernels::new(Kernel::Zero, Kernel::Zero);
        assert!(check_admissibility(&k, 1.0, 0, 1).is_err());
    }
}
