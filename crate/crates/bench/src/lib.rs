//! Shared inputs for the benchmarks: a 71-day forward curve shaped like the
//! day-ahead normalized market data, a one-month contract and a
//! piecewise-linear `alpha`.

use mvhjm_core::{AlphaFunction, DiscreteMeasure, FutureContract};

pub const EXERCISE: f64 = 35.0 / 365.0;

pub struct Fixture {
    pub mu0: DiscreteMeasure,
    pub contract: FutureContract,
    pub alpha: AlphaFunction,
}

pub fn fixture() -> Fixture {
    let horizon = 0.2;
    let pairs: Vec<(f64, f64)> = (0..71)
        .map(|k| {
            let level = (1.0 - 0.0008 * k as f64) * (1.0 + 0.03 * (std::f64::consts::TAU * k as f64 / 7.0).sin());
            (k as f64 / 365.0, level / 365.0)
        })
        .collect();
    Fixture {
        mu0: DiscreteMeasure::from_pairs(horizon, &pairs).expect("valid curve"),
        contract: FutureContract::uniform(1.33 / 12.0, 2.33 / 12.0).expect("valid contract"),
        alpha: AlphaFunction::piecewise_linear(horizon, vec![0.0, 0.1, 0.2], vec![0.06, 0.05, 0.045])
            .expect("valid alpha"),
    }
}

pub fn strikes() -> Vec<f64> {
    (0..10).map(|i| 0.9 + 0.2 * i as f64 / 9.0).collect()
}
