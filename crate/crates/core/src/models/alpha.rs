//! The branching-rate function `alpha >= 0` of the affine model and its
//! primitive `A(x) = int_0^x alpha`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::MlpAlpha;
use crate::error::{Error, Result};

/// Number of Simpson intervals used for the primitive of a network.
pub const NEURAL_PRIMITIVE_INTERVALS: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaRepr {
    PiecewiseLinear { grid: Vec<f64>, values: Vec<f64> },
    Neural(MlpAlpha),
}

#[derive(Debug, Clone, PartialEq)]
enum Primitive {
    /// Cumulative integral at each grid knot.
    Knots(Vec<f64>),
    /// Cumulative Simpson values on a uniform grid with spacing `h`.
    Uniform { h: f64, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFunction {
    horizon: f64,
    repr: AlphaRepr,
    primitive: Primitive,
}

impl AlphaFunction {
    pub fn constant(horizon: f64, a: f64) -> Result<Self> {
        Self::piecewise_linear(horizon, vec![0.0, horizon], vec![a, a])
    }

    /// Linear interpolation between `(grid[j], values[j])`, constant beyond the
    /// first and last knots.
    pub fn piecewise_linear(horizon: f64, grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be > 0, got {horizon}")));
        }
        if grid.is_empty() || grid.len() != values.len() {
            return Err(Error::Shape(format!(
                "grid has {} knots but {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("grid must be strictly increasing".into()));
        }
        if grid.iter().any(|&x| !(x.is_finite() && (0.0..=horizon).contains(&x))) {
            return Err(Error::Domain(format!("grid must lie in [0, {horizon}]")));
        }
        if values.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::Domain("alpha values must be finite and >= 0".into()));
        }
        let mut knots = Vec::with_capacity(grid.len());
        let mut acc = values[0] * grid[0];
        knots.push(acc);
        for j in 1..grid.len() {
            acc += 0.5 * (grid[j] - grid[j - 1]) * (values[j] + values[j - 1]);
            knots.push(acc);
        }
        Ok(Self { horizon, repr: AlphaRepr::PiecewiseLinear { grid, values }, primitive: Primitive::Knots(knots) })
    }

    pub fn neural(horizon: f64, net: MlpAlpha) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be > 0, got {horizon}")));
        }
        net.validate()?;
        let n = NEURAL_PRIMITIVE_INTERVALS;
        let h = horizon / n as f64;
        let f: Vec<f64> = (0..=n).map(|j| net.forward(j as f64 * h)).collect();
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("network produced a non-finite alpha".into()));
        }
        let mut values = vec![0.0; n + 1];
        for k in 1..=n {
            let raw = if k % 2 == 0 {
                values[k - 2] + h / 3.0 * (f[k - 2] + 4.0 * f[k - 1] + f[k])
            } else {
                values[k - 1] + h / 12.0 * (5.0 * f[k - 1] + 8.0 * f[k] - f[k + 1])
            };
            values[k] = raw.max(values[k - 1]);
        }
        Ok(Self { horizon, repr: AlphaRepr::Neural(net), primitive: Primitive::Uniform { h, values } })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn repr(&self) -> &AlphaRepr {
        &self.repr
    }

    /// `alpha(x)`, clamped to the domain.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.horizon);
        match &self.repr {
            AlphaRepr::PiecewiseLinear { grid, values } => {
                let j = grid.partition_point(|&g| g <= x);
                if j == 0 {
                    values[0]
                } else if j == grid.len() {
                    values[j - 1]
                } else {
                    let r = (x - grid[j - 1]) / (grid[j] - grid[j - 1]);
                    values[j - 1] + r * (values[j] - values[j - 1])
                }
            }
            AlphaRepr::Neural(net) => net.forward(x).max(0.0),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.value(x))
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if !(x.is_finite() && (0.0..=self.horizon).contains(&x)) {
            return Err(Error::Domain(format!("x = {x} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// `A(x)`, clamped to the domain.
    pub fn primitive(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.horizon);
        match (&self.repr, &self.primitive) {
            (AlphaRepr::PiecewiseLinear { grid, values }, Primitive::Knots(knots)) => {
                let j = grid.partition_point(|&g| g <= x);
                if j == 0 {
                    values[0] * x
                } else if j == grid.len() {
                    knots[j - 1] + values[j - 1] * (x - grid[j - 1])
                } else {
                    let len = x - grid[j - 1];
                    knots[j - 1] + 0.5 * len * (values[j - 1] + self.value(x))
                }
            }
            (_, Primitive::Uniform { h, values }) => {
                let pos = x / h;
                let k = (pos.floor() as usize).min(values.len() - 2);
                let r = pos - k as f64;
                (1.0 - r) * values[k] + r * values[k + 1]
            }
            _ => unreachable!("primitive matches representation"),
        }
    }

    /// `int_0^t alpha((x - s)^+) ds`: the alpha accumulated by an atom starting
    /// at `x` over `t`, including time spent absorbed at zero.
    pub fn transported_integral(&self, x: f64, t: f64) -> Result<f64> {
        self.check_domain(x)?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Domain(format!("t = {t} must be >= 0")));
        }
        Ok(self.transported_integral_unchecked(x, t))
    }

    #[inline]
    pub(crate) fn transported_integral_unchecked(&self, x: f64, t: f64) -> f64 {
        if t <= x {
            (self.primitive(x) - self.primitive(x - t)).max(0.0)
        } else {
            self.primitive(x) + self.value(0.0) * (t - x)
        }
    }

    pub fn n_params(&self) -> usize {
        match &self.repr {
            AlphaRepr::PiecewiseLinear { values, .. } => values.len(),
            AlphaRepr::Neural(net) => net.n_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match &self.repr {
            AlphaRepr::PiecewiseLinear { values, .. } => values.clone(),
            AlphaRepr::Neural(net) => net.params(),
        }
    }

    /// Same representation with new parameters. Grid values are projected
    /// onto `[0, inf)`.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.n_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.n_params(), params.len())));
        }
        match &self.repr {
            AlphaRepr::PiecewiseLinear { grid, .. } => {
                Self::piecewise_linear(self.horizon, grid.clone(), params.iter().map(|v| v.max(0.0)).collect())
            }
            AlphaRepr::Neural(net) => {
                let mut net = net.clone();
                net.set_params(params)?;
                Self::neural(self.horizon, net)
            }
        }
    }

    /// Gradient with respect to the parameters of `sum_p c_p A(x_p)`.
    ///
    /// Exact for grids; for networks it differentiates the cumulative
    /// Simpson rule (the monotone clamp is treated as inactive).
    pub fn primitive_gradient(&self, terms: &[(f64, f64)]) -> Vec<f64> {
        let mut grad = vec![0.0; self.n_params()];
        match (&self.repr, &self.primitive) {
            (AlphaRepr::PiecewiseLinear { grid, .. }, _) => {
                for &(x, c) in terms {
                    let x = x.clamp(0.0, self.horizon);
                    let j = grid.partition_point(|&g| g <= x);
                    if j == 0 {
                        grad[0] += c * x;
                        continue;
                    }
                    grad[0] += c * grid[0];
                    for m in 1..j {
                        let d = 0.5 * (grid[m] - grid[m - 1]);
                        grad[m - 1] += c * d;
                        grad[m] += c * d;
                    }
                    if j == grid.len() {
                        grad[j - 1] += c * (x - grid[j - 1]);
                    } else {
                        let len = x - grid[j - 1];
                        let r = len / (grid[j] - grid[j - 1]);
                        grad[j - 1] += c * 0.5 * len * (2.0 - r);
                        grad[j] += c * 0.5 * len * r;
                    }
                }
            }
            (AlphaRepr::Neural(net), Primitive::Uniform { h, values }) => {
                let n = values.len() - 1;
                let mut g_a = vec![0.0; n + 1];
                for &(x, c) in terms {
                    let pos = x.clamp(0.0, self.horizon) / h;
                    let k = (pos.floor() as usize).min(n - 1);
                    let r = pos - k as f64;
                    g_a[k] += (1.0 - r) * c;
                    g_a[k + 1] += r * c;
                }
                let mut g_f = vec![0.0; n + 1];
                for k in (1..=n).rev() {
                    let g = g_a[k];
                    if g == 0.0 {
                        continue;
                    }
                    if k % 2 == 0 {
                        g_a[k - 2] += g;
                        g_f[k - 2] += g * h / 3.0;
                        g_f[k - 1] += g * 4.0 * h / 3.0;
                        g_f[k] += g * h / 3.0;
                    } else {
                        g_a[k - 1] += g;
                        g_f[k - 1] += g * 5.0 * h / 12.0;
                        g_f[k] += g * 8.0 * h / 12.0;
                        g_f[k + 1] -= g * h / 12.0;
                    }
                }
                for (j, &g) in g_f.iter().enumerate() {
                    if g != 0.0 {
                        net.accumulate_gradient(j as f64 * h, g, &mut grad);
                    }
                }
            }
            _ => unreachable!("primitive matches representation"),
        }
        grad
    }

    pub fn to_file(&self) -> AlphaFile {
        match &self.repr {
            AlphaRepr::PiecewiseLinear { grid, values } => AlphaFile::Grid {
                grid: grid.clone(),
                values: values.clone(),
                horizon: Some(self.horizon),
            },
            AlphaRepr::Neural(net) => AlphaFile::Network { net: net.clone(), horizon: Some(self.horizon) },
        }
    }

    pub fn from_file(file: AlphaFile, default_horizon: f64) -> Result<Self> {
        match file {
            AlphaFile::Grid { grid, values, horizon } => {
                Self::piecewise_linear(horizon.unwrap_or(default_horizon), grid, values)
            }
            AlphaFile::Network { net, horizon } => Self::neural(horizon.unwrap_or(default_horizon), net),
        }
    }

    pub fn load_json(path: &Path, default_horizon: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: AlphaFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_file(file, default_horizon)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).expect("alpha serializes");
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// On-disk form: `{grid, values}` or `{layers: [{W, b, act}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaFile {
    Grid {
        grid: Vec<f64>,
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
    Network {
        #[serde(flatten)]
        net: MlpAlpha,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n).map(|k| f(a + k as f64 * h)).sum();
        h * (0.5 * f(a) + inner + 0.5 * f(b))
    }

    #[test]
    fn eval_examples() {
        let c = AlphaFunction::constant(1.0, 2.0).unwrap();
        assert_eq!(c.eval(0.37).unwrap(), 2.0);
        let ramp = AlphaFunction::piecewise_linear(1.0, vec![0.0, 1.0], vec![0.0, 4.0]).unwrap();
        assert_abs_diff_eq!(ramp.eval(0.5).unwrap(), 2.0, epsilon = 1e-15);
        assert!(matches!(ramp.eval(1.2), Err(Error::Domain(_))));
        assert!(AlphaFunction::piecewise_linear(1.0, vec![0.0, 0.5], vec![1.0, -1.0]).is_err());
        assert!(AlphaFunction::piecewise_linear(1.0, vec![0.5, 0.5], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn transported_integral_examples() {
        let a = AlphaFunction::constant(1.0, 2.0).unwrap();
        assert_abs_diff_eq!(a.transported_integral(0.5, 0.3).unwrap(), 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(a.transported_integral(0.5, 0.7).unwrap(), 1.4, epsilon = 1e-14);
        let zero = AlphaFunction::constant(1.0, 0.0).unwrap();
        assert_eq!(zero.transported_integral(0.5, 0.7).unwrap(), 0.0);
        // independent route: quadrature of s -> alpha((x - s)^+)
        let q = trapezoid(|s| a.value((0.5 - s).max(0.0)), 0.0, 0.7, 10_000);
        assert_abs_diff_eq!(q, 1.4, epsilon = 1e-8);
    }

    #[test]
    fn neural_primitive_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpAlpha::initialized(16, 0.5, 0.3, &mut rng).unwrap();
        let a = AlphaFunction::neural(0.5, net).unwrap();
        for &x in &[0.0, 0.1, 0.2345, 0.5] {
            let q = trapezoid(|s| a.value(s), 0.0, x, 20_000);
            assert_abs_diff_eq!(a.primitive(x), q, epsilon = 1e-8);
        }
    }

    #[test]
    fn primitive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MlpAlpha::initialized(4, 0.4, 0.2, &mut rng).unwrap();
        let alphas = vec![
            AlphaFunction::neural(0.4, net).unwrap(),
            AlphaFunction::piecewise_linear(0.4, vec![0.05, 0.15, 0.3], vec![0.1, 0.4, 0.2]).unwrap(),
        ];
        let terms = [(0.37, 1.5), (0.11, -0.7), (0.4, 0.2), (0.02, 1.0)];
        for a in alphas {
            let g = a.primitive_gradient(&terms);
            let p = a.params();
            let f = |q: &[f64]| {
                let b = a.with_params(q).unwrap();
                terms.iter().map(|&(x, c)| c * b.primitive(x)).sum::<f64>()
            };
            for j in 0..p.len() {
                let h = 1e-6;
                let mut up = p.clone();
                up[j] += h;
                let mut dn = p.clone();
                dn[j] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {j}: fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alpha.json");
        let grid = AlphaFunction::piecewise_linear(1.0, vec![0.0, 0.5, 1.0], vec![0.1, 0.3, 0.2]).unwrap();
        grid.save_json(&path).unwrap();
        assert_eq!(AlphaFunction::load_json(&path, 7.0).unwrap(), grid);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = AlphaFunction::neural(0.3, MlpAlpha::initialized(3, 0.3, 0.1, &mut rng).unwrap()).unwrap();
        net.save_json(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"layers\"") && text.contains("\"W\"") && text.contains("\"act\""));
        assert_eq!(AlphaFunction::load_json(&path, 7.0).unwrap(), net);

        std::fs::write(&path, r#"{"grid": [0.0, 1.0], "values": [2.0, 2.0]}"#).unwrap();
        assert_eq!(AlphaFunction::load_json(&path, 1.0).unwrap(), AlphaFunction::constant(1.0, 2.0).unwrap());
    }

    proptest! {
        #[test]
        fn transported_integral_properties(
            values in prop::collection::vec(0.0..3.0f64, 4),
            x in 0.0..=1.0f64,
            t1 in 0.0..=1.0f64,
            t2 in 0.0..=1.0f64,
        ) {
            let a = AlphaFunction::piecewise_linear(1.0, vec![0.0, 0.3, 0.6, 1.0], values).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let i_lo = a.transported_integral(x, lo).unwrap();
            let i_hi = a.transported_integral(x, hi).unwrap();
            prop_assert!(i_hi >= i_lo - 1e-14);
            // continuity at the kink t = x
            let below = a.transported_integral(x, x).unwrap();
            let above = a.transported_integral(x, (x + 1e-9).min(1.0)).unwrap();
            prop_assert!((above - below).abs() <= 1e-8);
            let q = trapezoid(|s| a.value((x - s).max(0.0)), 0.0, hi, 10_000);
            prop_assert!((q - i_hi).abs() <= 1e-6, "quadrature {} vs {}", q, i_hi);
        }
    }
}
