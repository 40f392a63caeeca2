//! Path simulation for the affine, Black-Scholes-type and discrete-maturity
//! models, and a statistical test of the drift condition on simulated paths.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{pair, pair_with, Atom, DiscreteMeasure, TestFunction};
use crate::models::{build_beta_matrix, AlphaFunction, BsKernels, DiscreteHjmConfig};
use crate::rng::path_rng;

/// Above this Poisson mean the branching draw uses its Gaussian limit.
const POISSON_LIMIT: f64 = 1e15;
/// Default rejection threshold for the drift test.
pub const DRIFT_Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    times: Vec<f64>,
}

impl PathGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::Domain("path grid must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("path grid must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// `n` equal steps on `[0, end]`.
    pub fn uniform(end: f64, n: usize) -> Result<Self> {
        if n == 0 || !(end > 0.0) {
            return Err(Error::Domain(format!("need n >= 1 and end > 0, got n = {n}, end = {end}")));
        }
        Self::new((0..=n).map(|k| end * k as f64 / n as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("grid is non-empty")
    }

    pub fn max_step(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePath {
    pub grid: PathGrid,
    pub states: Vec<DiscreteMeasure>,
}

impl MeasurePath {
    /// Rows `t,x,weight`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["t", "x", "weight"]).map_err(|e| csv_error(path, e))?;
        for (t, mu) in self.grid.times().iter().zip(&self.states) {
            for a in mu.atoms() {
                w.write_record(&[format!("{t:.17e}"), format!("{:.17e}", a.x), format!("{:.17e}", a.weight)])
                    .map_err(|e| csv_error(path, e))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a path written by [`MeasurePath::write_csv`]; times without atoms
    /// are lost, so the grid is the set of times that appear.
    pub fn read_csv(path: &Path, horizon: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut times: Vec<f64> = Vec::new();
        let mut atoms: Vec<Vec<Atom>> = Vec::new();
        for rec in r.deserialize::<(f64, f64, f64)>() {
            let (t, x, weight) = rec.map_err(|e| csv_error(path, e))?;
            if times.last() != Some(&t) {
                times.push(t);
                atoms.push(Vec::new());
            }
            atoms.last_mut().expect("pushed above").push(Atom { x, weight });
        }
        let grid = PathGrid::new(times)?;
        let domain = crate::measures::DomainConfig::new(horizon)?;
        let states = atoms.into_iter().map(|a| DiscreteMeasure::new(domain, a)).collect::<Result<_>>()?;
        Ok(Self { grid, states })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.to_path_buf(), message: e.to_string() }
}

/// Mass after a zero-drift branching step with accumulated rate `theta`:
/// a Poisson(`2 w / theta`) number of exponential clusters of mean `theta / 2`.
pub fn branching_draw<R: Rng + ?Sized>(w: f64, theta: f64, rng: &mut R) -> f64 {
    if w == 0.0 || theta == 0.0 {
        return w;
    }
    let mean = 2.0 * w / theta;
    if mean > POISSON_LIMIT {
        let z: f64 = rng.sample(StandardNormal);
        return (w + (w * theta).sqrt() * z).max(0.0);
    }
    let n: f64 = Poisson::new(mean).expect("finite positive mean").sample(rng);
    if n == 0.0 {
        return 0.0;
    }
    Gamma::new(n, 0.5 * theta).expect("positive shape and scale").sample(rng)
}

/// One exact step of the affine model: atoms move to `(x - dt)^+` and their
/// masses branch independently with rate integrated along the way.
pub fn exact_affine_step<R: Rng + ?Sized>(
    mu: &DiscreteMeasure,
    dt: f64,
    a: &AlphaFunction,
    rng: &mut R,
) -> Result<DiscreteMeasure> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
    }
    let mut atoms = Vec::with_capacity(mu.len());
    for atom in mu.atoms() {
        let theta = a.transported_integral(atom.x, dt)?;
        atoms.push(Atom { x: (atom.x - dt).max(0.0), weight: branching_draw(atom.weight, theta, rng) });
    }
    Ok(DiscreteMeasure::from_valid(mu.domain(), atoms).normalize())
}

fn check_grid(grid: &PathGrid, horizon: f64) -> Result<()> {
    if grid.end() > horizon {
        return Err(Error::Domain(format!("grid ends at {} beyond horizon {horizon}", grid.end())));
    }
    if grid.max_step() > 1e-2 * horizon {
        log::debug!("grid step {} exceeds 1% of the horizon", grid.max_step());
    }
    Ok(())
}

pub fn simulate_affine_path<R: Rng + ?Sized>(
    mu0: &DiscreteMeasure,
    grid: &PathGrid,
    a: &AlphaFunction,
    rng: &mut R,
) -> Result<MeasurePath> {
    check_grid(grid, mu0.horizon())?;
    let mut states = Vec::with_capacity(grid.times().len());
    states.push(mu0.normalize());
    for w in grid.times().windows(2) {
        let next = exact_affine_step(states.last().expect("non-empty"), w[1] - w[0], a, rng)?;
        states.push(next);
    }
    Ok(MeasurePath { grid: grid.clone(), states })
}

/// `n_paths` independent paths; path `i` uses stream `i` of `seed`.
pub fn simulate_affine_paths(
    mu0: &DiscreteMeasure,
    grid: &PathGrid,
    a: &AlphaFunction,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<MeasurePath>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| simulate_affine_path(mu0, grid, a, &mut path_rng(seed, p)))
        .collect()
}

/// Terminal states only, without storing the path.
pub fn simulate_affine_terminal(
    mu0: &DiscreteMeasure,
    grid: &PathGrid,
    a: &AlphaFunction,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<DiscreteMeasure>> {
    map_affine_terminal(mu0, grid, a, n_paths, seed, |mu| Ok(mu.clone()))
}

/// Applies `f` to the terminal state of each path, keeping only its output.
pub fn map_affine_terminal<T, F>(
    mu0: &DiscreteMeasure,
    grid: &PathGrid,
    a: &AlphaFunction,
    n_paths: usize,
    seed: u64,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&DiscreteMeasure) -> Result<T> + Sync,
{
    check_grid(grid, mu0.horizon())?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut mu = mu0.normalize();
            for w in grid.times().windows(2) {
                mu = exact_affine_step(&mu, w[1] - w[0], a, &mut rng)?;
            }
            f(&mu)
        })
        .collect()
}

/// Log-Euler step of a Black-Scholes-type model without jumps.
///
/// Weights are multiplied by `exp(s_i - v_i / 2)` where `s` is Gaussian with
/// covariance `beta(x_i, x_j) dt` at the pre-step positions and `v_i` its
/// variance after repair, so each weight keeps its conditional mean.
pub fn logeuler_bs_step<R: Rng + ?Sized>(
    mu: &DiscreteMeasure,
    dt: f64,
    k: &BsKernels,
    rng: &mut R,
) -> Result<DiscreteMeasure> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Domain(format!("dt must be > 0, got {dt}")));
    }
    if !k.pi.is_zero() {
        return Err(Error::Domain("log-Euler simulation requires pi = 0".into()));
    }
    let atoms = mu.atoms();
    let n = atoms.len();
    let mut out: Vec<Atom> = atoms.iter().map(|a| Atom { x: (a.x - dt).max(0.0), weight: a.weight }).collect();
    if n > 0 && !k.beta.is_zero() {
        let cov = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (k.beta.eval(atoms[i].x, atoms[j].x) + k.beta.eval(atoms[j].x, atoms[i].x)) * dt
        });
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::KernelBound("covariance kernel is not finite at the atoms".into()));
        }
        let eig = SymmetricEigen::new(cov);
        let min = eig.eigenvalues.min();
        if min < 0.0 {
            log::warn!("clipping negative covariance eigenvalue {min:e} to 0");
        }
        let root = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&root);
        let xi = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let s = &factor * xi;
        for (i, a) in out.iter_mut().enumerate() {
            let var = factor.row(i).norm_squared();
            a.weight *= (s[i] - 0.5 * var).exp();
        }
    }
    Ok(DiscreteMeasure::from_valid(mu.domain(), out).normalize())
}

pub fn simulate_bs_path<R: Rng + ?Sized>(
    mu0: &DiscreteMeasure,
    grid: &PathGrid,
    k: &BsKernels,
    rng: &mut R,
) -> Result<MeasurePath> {
    check_grid(grid, mu0.horizon())?;
    let mut states = vec![mu0.normalize()];
    for w in grid.times().windows(2) {
        let next = logeuler_bs_step(states.last().expect("non-empty"), w[1] - w[0], k, rng)?;
        states.push(next);
    }
    Ok(MeasurePath { grid: grid.clone(), states })
}

/// Discrete-maturity model on `{0, ..., T}`.
///
/// Each step applies `I + beta` and then replaces component `i < T` by a
/// branching draw with rate `alpha(i + 1)` over a unit step. Returns the
/// initial vector followed by one vector per step.
pub fn discrete_hjm_path<R: Rng + ?Sized>(
    mu0: &[f64],
    steps: usize,
    cfg: &DiscreteHjmConfig,
    a: &AlphaFunction,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let n = cfg.horizon + 1;
    if mu0.len() != n {
        return Err(Error::Shape(format!("initial vector has length {}, expected {n}", mu0.len())));
    }
    if mu0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain("initial vector must be non-negative".into()));
    }
    if steps > cfg.horizon {
        return Err(Error::Domain(format!("steps = {steps} exceeds horizon {}", cfg.horizon)));
    }
    if cfg.gamma > 1.0 {
        return Err(Error::Domain(format!("gamma = {} > 1 would create negative mass", cfg.gamma)));
    }
    let drift = DMatrix::identity(n, n) + build_beta_matrix(cfg);
    let mut out = vec![mu0.to_vec()];
    for _ in 0..steps {
        let prev = DVector::from_column_slice(out.last().expect("non-empty"));
        let mut nu: Vec<f64> = (&drift * prev).iter().copied().collect();
        for (i, v) in nu.iter_mut().enumerate().take(n - 1) {
            *v = branching_draw(v.max(0.0), a.value((i + 1) as f64), rng);
        }
        out.push(nu);
    }
    Ok(out)
}

/// `<phi, mu_t> + sum_{j <= t} <phi', mu_{j-1}>` for each state of a discrete path,
/// with `phi'(i) = phi(i) - phi(i - 1)` for `i > 0` and `phi'(0) = 0`.
pub fn discrete_martingale_statistic(path: &[Vec<f64>], phi: impl Fn(usize) -> f64) -> Vec<f64> {
    let pair = |mu: &[f64], f: &dyn Fn(usize) -> f64| mu.iter().enumerate().map(|(i, m)| f(i) * m).sum::<f64>();
    let dphi = |i: usize| if i == 0 { 0.0 } else { phi(i) - phi(i - 1) };
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(path.len());
    for (t, mu) in path.iter().enumerate() {
        if t > 0 {
            acc += pair(&path[t - 1], &dphi);
        }
        out.push(pair(mu, &phi) + acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftTestOptions {
    pub threshold: f64,
    /// Smallest standard error used in a z-statistic; covers the bias of the
    /// trapezoid rule when paths are nearly deterministic. `None` uses
    /// `max_step^2 (1 + mean |M_0|)`.
    pub bias_floor: Option<f64>,
}

impl Default for DriftTestOptions {
    fn default() -> Self {
        Self { threshold: DRIFT_Z_THRESHOLD, bias_floor: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTestReport {
    pub test_function: String,
    pub gamma: f64,
    pub n_paths: usize,
    pub times: Vec<f64>,
    /// Mean of `M_t` over paths at each grid time.
    pub mean: Vec<f64>,
    /// z-statistics of the increments over each grid interval.
    pub z_interval: Vec<f64>,
    /// z-statistics of `M_t - M_0` at each grid time after the first.
    pub z_cumulative: Vec<f64>,
    pub bias_floor: f64,
    pub max_abs_z: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Tests that `M_t = <phi, mu_t> + int_0^t (<phi', mu_s> + gamma phi(0) mu_s({0})) ds`
/// has zero-mean increments across paths.
pub fn martingale_drift_test(paths: &[MeasurePath], phi: &TestFunction, gamma: f64) -> Result<DriftTestReport> {
    martingale_drift_test_with(paths, phi, gamma, &DriftTestOptions::default())
}

pub fn martingale_drift_test_with(
    paths: &[MeasurePath],
    phi: &TestFunction,
    gamma: f64,
    opts: &DriftTestOptions,
) -> Result<DriftTestReport> {
    phi.require_d1()?;
    let first = paths.first().ok_or_else(|| Error::Domain("no paths".into()))?;
    if paths.len() < 2 {
        return Err(Error::Domain("need at least 2 paths".into()));
    }
    let grid = &first.grid;
    for p in paths {
        if p.grid != *grid || p.states.len() != grid.times().len() {
            return Err(Error::Shape("paths do not share a grid".into()));
        }
    }
    let times = grid.times();
    let phi0 = phi.eval(0.0);
    let m: Vec<Vec<f64>> = paths
        .par_iter()
        .map(|p| {
            let mut integrand = Vec::with_capacity(times.len());
            let mut values = Vec::with_capacity(times.len());
            let mut acc = 0.0;
            for (k, mu) in p.states.iter().enumerate() {
                let f = pair_with(|x| phi.deriv(x), mu)? + gamma * phi0 * mu.mass_at_zero();
                if k > 0 {
                    acc += 0.5 * (times[k] - times[k - 1]) * (integrand[k - 1] + f);
                }
                integrand.push(f);
                values.push(pair(phi, mu)? + acc);
            }
            Ok(values)
        })
        .collect::<Result<_>>()?;

    let n = paths.len() as f64;
    let stats = |f: &dyn Fn(&[f64]) -> f64| {
        let xs: Vec<f64> = m.iter().map(|v| f(v)).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let mean_abs_m0 = m.iter().map(|v| v[0].abs()).sum::<f64>() / n;
    let bias_floor = opts.bias_floor.unwrap_or(grid.max_step().powi(2) * (1.0 + mean_abs_m0));
    let z = |(mean, se): (f64, f64)| mean / se.max(bias_floor);

    let mean: Vec<f64> = (0..times.len()).map(|k| stats(&|v| v[k]).0).collect();
    let z_interval: Vec<f64> = (1..times.len()).map(|k| z(stats(&|v| v[k] - v[k - 1]))).collect();
    let z_cumulative: Vec<f64> = (1..times.len()).map(|k| z(stats(&|v| v[k] - v[0]))).collect();
    let max_abs_z = z_interval.iter().chain(&z_cumulative).fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(DriftTestReport {
        test_function: phi.label().to_string(),
        gamma,
        n_paths: paths.len(),
        times: times.to_vec(),
        mean,
        z_interval,
        z_cumulative,
        bias_floor,
        max_abs_z,
        threshold: opts.threshold,
        pass: max_abs_z < opts.threshold,
    })
}
