use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete maturities `{0, 1, ..., T}` with killing rate `gamma` at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteHjmConfig {
    pub horizon: usize,
    pub gamma: f64,
}

impl DiscreteHjmConfig {
    pub fn new(horizon: usize, gamma: f64) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::Domain("discrete horizon must be >= 1".into()));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::Domain(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self { horizon, gamma })
    }
}

/// Drift matrix of the increments: `mu_t - mu_{t-1} = beta mu_{t-1} + dM_t`.
///
/// Row 0 is `(-gamma, 1, 0, ...)`, interior rows carry `-1` on the diagonal
/// and `+1` above it, and the last row is `(0, ..., 0, -1)`.
pub fn build_beta_matrix(cfg: &DiscreteHjmConfig) -> DMatrix<f64> {
    let n = cfg.horizon + 1;
    let mut beta = DMatrix::zeros(n, n);
    beta[(0, 0)] = -cfg.gamma;
    beta[(0, 1)] = 1.0;
    for i in 1..n {
        beta[(i, i)] = -1.0;
        if i + 1 < n {
            beta[(i, i + 1)] = 1.0;
        }
    }
    beta
}
