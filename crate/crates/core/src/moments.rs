//! Polynomial moments through the dual operators, a Feynman-Kac particle
//! estimator for Black-Scholes-type models, and a control-variate pricer.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{pair, total_mass, DiscreteMeasure, TestFunction};
use crate::models::{AlphaFunction, BsKernels};
use crate::quad::simpson;
use crate::rng::path_rng;

/// Highest moment order handled by the dual machinery.
pub const MAX_ORDER: usize = 4;

/// `g^{(x) m}`, stored as `g` and `m`.
#[derive(Debug, Clone)]
pub struct RankOneCoefficient {
    order: usize,
    g: TestFunction,
}

impl RankOneCoefficient {
    pub fn new(order: usize, g: TestFunction) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::Domain(format!("moment order {order} exceeds {MAX_ORDER}")));
        }
        g.require_d1()?;
        Ok(Self { order, g })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn g(&self) -> &TestFunction {
        &self.g
    }

    /// `g(z_1) ... g(z_m)`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.order);
        z.iter().map(|&x| self.g.eval(x)).product()
    }
}

/// Particle positions and the accumulated `int gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub positions: Vec<f64>,
    pub discount: f64,
}

/// `E[<phi, mu_{s+dt}> | mu_s] = <phi((. - dt)^+), mu_s>`, for every model.
pub fn first_moment(mu_s: &DiscreteMeasure, phi: &TestFunction, dt: f64) -> Result<f64> {
    phi.require_d1()?;
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::Domain(format!("dt must be >= 0, got {dt}")));
    }
    pair(&phi.shifted(dt), mu_s)
}

/// `E <g, mu_t>^2` in the affine model:
/// `<S_t g, mu0>^2 + int_0^t <S_{t-s}(alpha (S_s g)^2), mu0> ds`, with `S_u h = h((. - u)^+)`.
pub fn second_moment_affine(
    mu0: &DiscreteMeasure,
    g: &TestFunction,
    a: &AlphaFunction,
    t: f64,
    n_quad: usize,
) -> Result<f64> {
    g.require_d1()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("t must be >= 0, got {t}")));
    }
    let mean = first_moment(mu0, g, t)?;
    let integrand = |s: f64| {
        mu0.atoms()
            .iter()
            .map(|atom| {
                let y = (atom.x - (t - s)).max(0.0);
                let gs = g.eval((y - s).max(0.0));
                atom.weight * a.value(y) * gs * gs
            })
            .sum::<f64>()
    };
    let correction = if t > 0.0 { simpson(integrand, 0.0, t, n_quad) } else { 0.0 };
    let v = mean * mean + correction;
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("second moment is {v}")));
    }
    Ok(v)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { estimate: mean, std_error: (var / n).sqrt() }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self { estimate: self.estimate * factor, std_error: self.std_error * factor.abs() }
    }
}

/// Maximum number of Simpson panels per unit of path time for `int gamma`.
const DISCOUNT_PANELS: usize = 64;

struct ParticleDynamics<'a> {
    k: &'a BsKernels,
    /// Thinning bound for `pi`; zero disables jumps.
    pi_bound: f64,
}

impl<'a> ParticleDynamics<'a> {
    fn new(k: &'a BsKernels, horizon: f64) -> Result<Self> {
        k.beta.sup_bound(horizon)?;
        let pi_bound = if k.pi.is_zero() { 0.0 } else { k.pi.sup_bound(horizon)? };
        Ok(Self { k, pi_bound })
    }

    /// `gamma(z) = sum_{i != j} (pi(z_i, z_j) + beta(z_i, z_j)) / 2`.
    fn gamma(&self, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, &zi) in z.iter().enumerate() {
            for (j, &zj) in z.iter().enumerate() {
                if i != j {
                    acc += self.k.pi.eval(zi, zj) + self.k.beta.eval(zi, zj);
                }
            }
        }
        0.5 * acc
    }

    fn integrate_gamma(&self, z: &[f64], len: f64, panels: usize) -> f64 {
        if z.len() < 2 || len <= 0.0 {
            return 0.0;
        }
        let mut buf = z.to_vec();
        simpson(
            |s| {
                for (b, &x) in buf.iter_mut().zip(z) {
                    *b = (x - s).max(0.0);
                }
                self.gamma(&buf)
            },
            0.0,
            len,
            panels,
        )
    }

    /// Runs the particle system from `state` for time `t`.
    fn evolve<R: Rng + ?Sized>(&self, state: &mut ParticleState, t: f64, rng: &mut R) {
        let m = state.positions.len();
        let n_pairs = m * m.saturating_sub(1);
        let rate = 0.5 * self.pi_bound * n_pairs as f64;
        let mut now = 0.0;
        while now < t {
            let next = if rate > 0.0 { now + -rng.random::<f64>().ln() / rate } else { f64::INFINITY };
            let stop = next.min(t);
            let len = stop - now;
            let panels = ((len * DISCOUNT_PANELS as f64 / t.max(1e-300)).ceil() as usize).max(2);
            state.discount += self.integrate_gamma(&state.positions, len, panels);
            for z in &mut state.positions {
                *z = (*z - len).max(0.0);
            }
            now = stop;
            if next > t {
                break;
            }
            // propose an ordered pair: coordinate j jumps to coordinate i
            let p = rng.random_range(0..n_pairs);
            let i = p / (m - 1);
            let mut j = p % (m - 1);
            if j >= i {
                j += 1;
            }
            let (zi, zj) = (state.positions[i], state.positions[j]);
            if rng.random::<f64>() * self.pi_bound < self.k.pi.eval(zi, zj) {
                state.positions[j] = zi;
            }
        }
    }
}

fn check_order(m: usize) -> Result<()> {
    if m == 0 || m > MAX_ORDER {
        return Err(Error::Domain(format!("moment order must be in 1..={MAX_ORDER}, got {m}")));
    }
    Ok(())
}

/// `E <g, mu_t>^m` in a Black-Scholes-type model via the particle representation.
///
/// Initial positions are iid from `mu0 / mass`. Each coordinate moves left at
/// unit speed and is absorbed at 0; coordinate `j` jumps onto coordinate `i`
/// at rate `pi(z_i, z_j) / 2`. Paths are weighted by `exp(int gamma)`.
pub fn particle_moment_bs(
    mu0: &DiscreteMeasure,
    g: &TestFunction,
    m: usize,
    t: f64,
    k: &BsKernels,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    check_order(m)?;
    let mass = total_mass(mu0);
    if !(mass > 0.0) {
        return Err(Error::Domain("initial measure has no mass".into()));
    }
    if n_paths < 2 {
        return Err(Error::Domain("need at least 2 paths".into()));
    }
    let dyn_ = ParticleDynamics::new(k, mu0.horizon())?;
    let atoms = mu0.atoms();
    let pick = WeightedIndex::new(atoms.iter().map(|a| a.weight))
        .map_err(|e| Error::Domain(format!("cannot sample initial positions: {e}")))?;
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let positions = (0..m).map(|_| atoms[pick.sample(&mut rng)].x).collect();
            let mut state = ParticleState { positions, discount: 0.0 };
            dyn_.evolve(&mut state, t, &mut rng);
            state.discount.exp() * state.positions.iter().map(|&z| g.eval(z)).product::<f64>()
        })
        .collect();
    Ok(Estimate::from_samples(&samples).scaled(mass.powi(m as i32)))
}

/// `E[exp(int_0^t gamma) h(Z_t) | Z_0 = z0]` for the rank-one `h = g^{(x) m}`.
pub fn particle_expectation_from(
    z0: &[f64],
    g: &TestFunction,
    t: f64,
    k: &BsKernels,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    check_order(z0.len())?;
    if n_paths < 2 {
        return Err(Error::Domain("need at least 2 paths".into()));
    }
    let dyn_ = ParticleDynamics::new(k, horizon)?;
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut state = ParticleState { positions: z0.to_vec(), discount: 0.0 };
            dyn_.evolve(&mut state, t, &mut rng);
            state.discount.exp() * state.positions.iter().map(|&z| g.eval(z)).product::<f64>()
        })
        .collect();
    Ok(Estimate::from_samples(&samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlVariateResult {
    pub price: f64,
    /// `1 - Corr^2` between payoff and control.
    pub variance_ratio: f64,
    pub coefficient: f64,
}

fn moments2(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    (cov / (n - 1.0), va / (n - 1.0), vb / (n - 1.0))
}

/// `mean(theta) - c (mean(p) - E p)` with `c = Cov(theta, p) / Var(p)`.
pub fn control_variate_price(payoff: &[f64], poly: &[f64], poly_expectation: f64) -> Result<ControlVariateResult> {
    if payoff.len() != poly.len() {
        return Err(Error::Shape(format!("{} payoffs vs {} control samples", payoff.len(), poly.len())));
    }
    if payoff.len() < 2 {
        return Err(Error::Shape("need at least 2 samples".into()));
    }
    let (cov, var_theta, var_p) = moments2(payoff, poly);
    if !(var_p > 0.0) {
        return Err(Error::DegenerateControl);
    }
    let coefficient = cov / var_p;
    let res = control_variate_price_with(payoff, poly, poly_expectation, coefficient)?;
    let denom = var_theta * var_p;
    let variance_ratio = if denom > 0.0 { ((denom - cov * cov) / denom).max(0.0) } else { 1.0 };
    Ok(ControlVariateResult { variance_ratio, ..res })
}

/// Control-variate estimator with a fixed coefficient.
pub fn control_variate_price_with(
    payoff: &[f64],
    poly: &[f64],
    poly_expectation: f64,
    coefficient: f64,
) -> Result<ControlVariateResult> {
    if payoff.len() != poly.len() || payoff.is_empty() {
        return Err(Error::Shape(format!("{} payoffs vs {} control samples", payoff.len(), poly.len())));
    }
    let n = payoff.len() as f64;
    let mt = payoff.iter().sum::<f64>() / n;
    let mp = poly.iter().sum::<f64>() / n;
    let price = if coefficient == 0.0 { mt } else { mt - coefficient * (mp - poly_expectation) };
    Ok(ControlVariateResult { price, variance_ratio: 1.0, coefficient })
}

/// Model whose dual operators are evaluated.
#[derive(Debug, Clone)]
pub enum DualModel {
    Affine(AlphaFunction),
    BlackScholes(BsKernels),
}

/// Pointwise evaluator of `L_m^m(g^m)` and `L_m^{m-1}(g^m)`, symmetrized over
/// coordinates.
#[derive(Debug, Clone)]
pub struct DualOperator {
    coef: RankOneCoefficient,
    model: DualModel,
}

/// `L_m` acting on `g^{(x) m}` for the given model.
pub fn dual_apply(m: usize, g: &TestFunction, model: DualModel) -> Result<DualOperator> {
    check_order(m)?;
    Ok(DualOperator { coef: RankOneCoefficient::new(m, g.clone())?, model })
}

impl DualOperator {
    pub fn order(&self) -> usize {
        self.coef.order
    }

    fn rest(&self, z: &[f64], skip: &[usize]) -> f64 {
        z.iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .map(|(_, &x)| self.coef.g.eval(x))
            .product()
    }

    /// `L_m^m(g^m)` at an `m`-tuple.
    pub fn leading(&self, z: &[f64]) -> Result<f64> {
        let m = self.order();
        if z.len() != m {
            return Err(Error::Shape(format!("expected {m} points, got {}", z.len())));
        }
        let g = &self.coef.g;
        let mut v = -(0..m).map(|i| g.deriv(z[i]) * self.rest(z, &[i])).sum::<f64>();
        if let DualModel::BlackScholes(k) = &self.model {
            for i in 0..m {
                for j in i + 1..m {
                    v += k.q2(g.eval(z[i]), g.eval(z[j]), z[i], z[j]) * self.rest(z, &[i, j]);
                }
            }
        }
        Ok(v)
    }

    /// `L_m^{m-1}(g^m)` at an `(m-1)`-tuple; zero for Black-Scholes-type models.
    pub fn lower(&self, z: &[f64]) -> Result<f64> {
        let m = self.order();
        if z.len() + 1 != m {
            return Err(Error::Shape(format!("expected {} points, got {}", m - 1, z.len())));
        }
        match &self.model {
            DualModel::BlackScholes(_) => Ok(0.0),
            DualModel::Affine(a) => {
                let g = &self.coef.g;
                let sum: f64 = (0..z.len())
                    .map(|i| a.value(z[i]) * g.eval(z[i]).powi(2) * self.rest(z, &[i]))
                    .sum();
                Ok(0.5 * m as f64 * sum)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Kernel;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit(h: f64) -> AlphaFunction {
        AlphaFunction::constant(1.0, h).unwrap()
    }

    #[test]
    fn first_moment_examples() {
        let mu = DiscreteMeasure::dirac(1.0, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(first_moment(&mu, &TestFunction::square(), 0.2).unwrap(), 0.09, epsilon = 1e-15);
        let mu = DiscreteMeasure::from_pairs(1.0, &[(0.1, 0.3), (0.8, 1.2)]).unwrap();
        assert_eq!(first_moment(&mu, &TestFunction::square(), 0.0).unwrap(), pair(&TestFunction::square(), &mu).unwrap());
        assert_abs_diff_eq!(first_moment(&mu, &TestFunction::constant(1.0), 0.7).unwrap(), 1.5, epsilon = 1e-15);
        let not_d1 = TestFunction::new("x", |x| x, |_| 1.0);
        assert!(matches!(first_moment(&mu, &not_d1, 0.1), Err(Error::NotD1(_))));
    }

    #[test]
    fn second_moment_examples() {
        let mu = DiscreteMeasure::from_pairs(1.0, &[(0.3, 0.5), (0.9, 1.5)]).unwrap();
        let g = TestFunction::gaussian(0.5);
        let m1 = first_moment(&mu, &g, 0.4).unwrap();
        assert_abs_diff_eq!(second_moment_affine(&mu, &g, &unit(0.0), 0.4, 64).unwrap(), m1 * m1, epsilon = 1e-14);
        let v = second_moment_affine(&mu, &TestFunction::constant(1.0), &unit(0.7), 0.4, 64).unwrap();
        assert_abs_diff_eq!(v, 4.0 + 0.7 * 0.4 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn particle_single_order_is_first_moment() {
        let mu = DiscreteMeasure::from_pairs(1.0, &[(0.3, 0.5), (0.9, 1.5)]).unwrap();
        let g = TestFunction::gaussian(0.5);
        let k = BsKernels::new(Kernel::Constant { value: 0.4 }, Kernel::OffDiagonal { value: 0.2 });
        let est = particle_moment_bs(&mu, &g, 1, 0.3, &k, 20_000, 1).unwrap();
        let exact = first_moment(&mu, &g, 0.3).unwrap();
        assert!((est.estimate - exact).abs() <= 3.0 * est.std_error, "{est:?} vs {exact}");
    }

    #[test]
    fn particle_without_interaction() {
        let mu = DiscreteMeasure::from_pairs(1.0, &[(0.3, 0.5), (0.9, 1.5)]).unwrap();
        let g = TestFunction::gaussian(0.5);
        let k = BsKernels::new(Kernel::Zero, Kernel::Zero);
        let est = particle_moment_bs(&mu, &g, 2, 0.3, &k, 20_000, 2).unwrap();
        let m1 = first_moment(&mu, &g, 0.3).unwrap();
        assert!((est.estimate - m1 * m1).abs() <= 3.0 * est.std_error, "{est:?} vs {}", m1 * m1);
    }

    #[test]
    fn particle_rejects_bad_input() {
        let mu = DiscreteMeasure::dirac(1.0, 0.5, 1.0).unwrap();
        let k = BsKernels::new(Kernel::Zero, Kernel::custom(|x, y| 1.0 / (x - y)));
        let g = TestFunction::constant(1.0);
        assert!(matches!(particle_moment_bs(&mu, &g, 2, 0.1, &k, 10, 0), Err(Error::KernelBound(_))));
        let k = BsKernels::new(Kernel::Zero, Kernel::Zero);
        assert!(particle_moment_bs(&mu, &g, 5, 0.1, &k, 10, 0).is_err());
        let empty = DiscreteMeasure::from_pairs(1.0, &[]).unwrap();
        assert!(particle_moment_bs(&empty, &g, 2, 0.1, &k, 10, 0).is_err());
    }

    #[test]
    fn control_variate_examples() {
        let theta = [1.0, 3.0, 2.0, 6.0];
        let r = control_variate_price(&theta, &theta, 3.5).unwrap();
        assert_eq!(r.variance_ratio, 0.0);
        assert_abs_diff_eq!(r.price, 3.5, epsilon = 1e-15);
        let plain = control_variate_price_with(&theta, &[0.0, 1.0, 0.0, 1.0], 10.0, 0.0).unwrap();
        assert_eq!(plain.price, 3.0);
        assert!(matches!(control_variate_price(&theta, &[1.0; 4], 1.0), Err(Error::DegenerateControl)));
        assert!(matches!(control_variate_price(&theta, &[1.0; 3], 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn dual_examples() {
        let g = TestFunction::gaussian(0.3);
        let a = unit(1.3);
        let k = BsKernels::new(Kernel::Gaussian { scale: 0.5, length: 0.4 }, Kernel::OffDiagonal { value: 0.2 });
        for model in [DualModel::Affine(a.clone()), DualModel::BlackScholes(k.clone())] {
            let d = dual_apply(1, &g, model).unwrap();
            assert_abs_diff_eq!(d.leading(&[0.4]).unwrap(), -g.deriv(0.4), epsilon = 1e-15);
        }
        let one = TestFunction::constant(1.0);
        let d = dual_apply(2, &one, DualModel::Affine(a)).unwrap();
        assert_eq!(d.leading(&[0.2, 0.5]).unwrap(), 0.0);
        assert_abs_diff_eq!(d.lower(&[0.2]).unwrap(), 1.3, epsilon = 1e-15);
        let kb = BsKernels::new(Kernel::Gaussian { scale: 0.5, length: 0.4 }, Kernel::Zero);
        let d = dual_apply(2, &one, DualModel::BlackScholes(kb.clone())).unwrap();
        assert_abs_diff_eq!(d.leading(&[0.2, 0.5]).unwrap(), kb.beta.eval(0.2, 0.5), epsilon = 1e-15);
        assert_eq!(d.lower(&[0.2]).unwrap(), 0.0);
        assert!(dual_apply(5, &one, DualModel::BlackScholes(kb)).is_err());
    }

    proptest! {
        #[test]
        fn dual_outputs_are_symmetric(z in prop::collection::vec(0.0..1.0f64, 4), m in 2usize..=4) {
            let g = TestFunction::gaussian(0.3);
            let k = BsKernels::new(Kernel::Gaussian { scale: 0.5, length: 0.4 }, Kernel::OffDiagonal { value: 0.2 });
            let a = AlphaFunction::piecewise_linear(1.0, vec![0.0, 1.0], vec![0.2, 1.1]).unwrap();
            for model in [DualModel::Affine(a), DualModel::BlackScholes(k)] {
                let d = dual_apply(m, &g, model).unwrap();
                let z = &z[..m];
                let mut rev = z.to_vec();
                rev.reverse();
                prop_assert!((d.leading(z).unwrap() - d.leading(&rev).unwrap()).abs() <= 1e-12);
                let mut rot = z[..m - 1].to_vec();
                rot.rotate_left(1);
                prop_assert!((d.lower(&z[..m - 1]).unwrap() - d.lower(&rot).unwrap()).abs() <= 1e-12);
            }
        }

        #[test]
        fn second_moment_dominates_squared_mean(
            atoms in prop::collection::vec((0.0..1.0f64, 0.0..2.0f64), 1..6),
            level in 0.0..3.0f64,
            t in 0.0..1.0f64,
            scale in 0.05..2.0f64,
        ) {
            let mu = DiscreteMeasure::from_pairs(1.0, &atoms).unwrap();
            let g = TestFunction::gaussian(scale);
            let m1 = first_moment(&mu, &g, t).unwrap();
            let m2 = second_moment_affine(&mu, &g, &unit(level), t, 32).unwrap();
            prop_assert!(m2 >= m1 * m1 - 1e-9);
        }
    }
}
