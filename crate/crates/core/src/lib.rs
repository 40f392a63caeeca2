//! Measure-valued HJM models for energy forward curves.
//!
//! The forward curve is a finite measure on maturities `[0, T]`. Futures are
//! pairings of that measure with delivery weights; the dynamics are either an
//! affine branching model with rate `alpha` or a Black-Scholes-type model with
//! covariance kernel `beta` and jump kernel `pi`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod contracts;
pub mod error;
pub mod measures;
pub mod models;
pub mod moments;
pub mod quad;
pub mod riccati;
pub mod rng;
pub mod simulate;

pub use contracts::{future_price, FutureContract, OptionSpec, WeightKind};
pub use error::{Error, Result};
pub use measures::{pair, shift_absorb, Atom, DiscreteMeasure, DomainConfig, ForwardCurve, TestFunction};
pub use models::{AlphaFunction, BsKernels, DiscreteHjmConfig, Kernel, MlpAlpha};
pub use riccati::{fourier_call_price, FourierConfig, FourierPricer};
