use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("contract expired: t = {t} is after the delivery start {tau1}")]
    ContractExpired { t: f64, tau1: f64 },

    #[error("delivery periods do not partition the interval: {0}")]
    Partition(String),

    #[error("test function is not in D1: |phi'(0)| = {0:e}")]
    NotD1(f64),

    #[error("Riccati denominator vanishes ({denominator:e}) at t = {t}, x = {x}; the exponential moment does not exist")]
    RiccatiBlowup { t: f64, x: f64, denominator: f64 },

    #[error("damping {damping} too large: C * w * (A(x) - A(x - tau)) / 2 = {bound} at x = {x} must stay below 1")]
    DampingTooLarge { damping: f64, bound: f64, x: f64 },

    #[error("Fourier quadrature left an imaginary residual {imag:e} (real part {real})")]
    QuadratureWarning { real: f64, imag: f64 },

    #[error("kernel is not bounded: {0}")]
    KernelBound(String),

    #[error("control variate has zero variance")]
    DegenerateControl,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("calibration diverged at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RiccatiBlowup { .. }
                | Error::DampingTooLarge { .. }
                | Error::Divergence { .. }
                | Error::QuadratureWarning { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
