//! Atomic non-negative measures on the time-to-maturity interval `[0, T]`,
//! test functions with vanishing derivative at zero, and the transport
//! operator that moves mass toward zero and piles it up there.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atoms closer than this are treated as the same location.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// Tolerance on `|phi'(0)|` for D1 membership.
pub const D1_TOLERANCE: f64 = 1e-12;

/// Days per year used when converting daily curves to year fractions.
pub const DAYS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub horizon: f64,
}

impl DomainConfig {
    pub fn new(horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon })
    }

    pub fn contains(&self, x: f64) -> bool {
        (0.0..=self.horizon).contains(&x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub weight: f64,
}

/// A finite sum of weighted Dirac masses on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    domain: DomainConfig,
    atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn new(domain: DomainConfig, atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            if !(a.weight.is_finite() && a.weight >= 0.0) {
                return Err(Error::Domain(format!("atom weight must be finite and >= 0, got {}", a.weight)));
            }
            if !(a.x.is_finite() && domain.contains(a.x)) {
                return Err(Error::Domain(format!(
                    "atom location {} outside [0, {}]",
                    a.x, domain.horizon
                )));
            }
        }
        Ok(Self { domain, atoms })
    }

    pub fn from_pairs(horizon: f64, pairs: &[(f64, f64)]) -> Result<Self> {
        let domain = DomainConfig::new(horizon)?;
        Self::new(domain, pairs.iter().map(|&(x, weight)| Atom { x, weight }).collect())
    }

    pub fn empty(domain: DomainConfig) -> Self {
        Self { domain, atoms: Vec::new() }
    }

    pub fn dirac(horizon: f64, x: f64, weight: f64) -> Result<Self> {
        Self::from_pairs(horizon, &[(x, weight)])
    }

    /// Builds a measure without re-validating atoms. Callers guarantee the
    /// invariants (used by samplers that only transport valid atoms).
    pub(crate) fn from_valid(domain: DomainConfig, atoms: Vec<Atom>) -> Self {
        debug_assert!(atoms
            .iter()
            .all(|a| a.weight >= 0.0 && a.x >= 0.0 && a.x <= domain.horizon));
        Self { domain, atoms }
    }

    pub fn domain(&self) -> DomainConfig {
        self.domain
    }

    pub fn horizon(&self) -> f64 {
        self.domain.horizon
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Sorts atoms by location, merges locations within
    /// [`MERGE_TOLERANCE`] and drops zero-weight atoms.
    pub fn normalize(&self) -> Self {
        let mut atoms: Vec<Atom> = self.atoms.iter().copied().filter(|a| a.weight > 0.0).collect();
        atoms.sort_by(|a, b| a.x.total_cmp(&b.x));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if (a.x - last.x).abs() <= MERGE_TOLERANCE => last.weight += a.weight,
                _ => merged.push(a),
            }
        }
        Self { domain: self.domain, atoms: merged }
    }

    /// Mass sitting exactly at zero (after absorption).
    pub fn mass_at_zero(&self) -> f64 {
        self.atoms.iter().filter(|a| a.x == 0.0).map(|a| a.weight).sum()
    }

    /// Scales every weight by a non-negative factor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::Domain(format!("scale factor must be >= 0, got {factor}")));
        }
        Ok(Self {
            domain: self.domain,
            atoms: self.atoms.iter().map(|a| Atom { x: a.x, weight: a.weight * factor }).collect(),
        })
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A smooth test function together with its derivative.
///
/// D1 membership (`phi'(0) = 0`) is checked once at construction.
#[derive(Clone)]
pub struct TestFunction {
    value: RealFn,
    derivative: RealFn,
    certified_d1: bool,
    label: String,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("certified_d1", &self.certified_d1)
            .finish()
    }
}

impl TestFunction {
    pub fn new<V, D>(label: impl Into<String>, value: V, derivative: D) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let d0 = derivative(0.0);
        Self {
            certified_d1: d0.is_finite() && d0.abs() <= D1_TOLERANCE,
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            label: label.into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), move |_| c, |_| 0.0)
    }

    /// `x -> x^2`.
    pub fn square() -> Self {
        Self::new("x^2", |x| x * x, |x| 2.0 * x)
    }

    /// `x -> sum_k c_k x^k`.
    pub fn polynomial(coefficients: Vec<f64>) -> Self {
        let label = format!("poly{coefficients:?}");
        let c = coefficients.clone();
        Self::new(
            label,
            move |x| c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck),
            move |x| {
                coefficients
                    .iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (k, &ck)| acc * x + k as f64 * ck)
            },
        )
    }

    /// `x -> exp(-x^2 / scale)`.
    pub fn gaussian(scale: f64) -> Self {
        Self::new(
            format!("exp(-x^2/{scale})"),
            move |x| (-x * x / scale).exp(),
            move |x| -2.0 * x / scale * (-x * x / scale).exp(),
        )
    }

    /// `x -> cos(freq * x)`.
    pub fn cosine(freq: f64) -> Self {
        Self::new(
            format!("cos({freq}x)"),
            move |x| (freq * x).cos(),
            move |x| -freq * (freq * x).sin(),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_d1(&self) -> bool {
        self.certified_d1
    }

    pub fn require_d1(&self) -> Result<()> {
        if self.certified_d1 {
            Ok(())
        } else {
            Err(Error::NotD1(self.deriv(0.0).abs()))
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    /// `x -> phi((x - t)^+)`, the action of the transport semigroup.
    pub fn shifted(&self, t: f64) -> Self {
        let v = Arc::clone(&self.value);
        let d = Arc::clone(&self.derivative);
        Self {
            value: Arc::new(move |x| v((x - t).max(0.0))),
            derivative: Arc::new(move |x| if x > t { d(x - t) } else { 0.0 }),
            certified_d1: self.certified_d1,
            label: format!("{}((x-{t})+)", self.label),
        }
    }

    /// The derivative as a test function of its own (not certified).
    pub fn derivative_fn(&self) -> impl Fn(f64) -> f64 + '_ {
        move |x| self.deriv(x)
    }
}

/// `<phi, mu> = sum_i w_i phi(x_i)`.
pub fn pair(phi: &TestFunction, mu: &DiscreteMeasure) -> Result<f64> {
    pair_with(|x| phi.eval(x), mu)
}

/// Pairing with an arbitrary function of the location.
pub fn pair_with<F: Fn(f64) -> f64>(f: F, mu: &DiscreteMeasure) -> Result<f64> {
    let mut acc = 0.0;
    for a in mu.atoms() {
        let v = f(a.x);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite test function value at x = {}", a.x)));
        }
        acc += a.weight * v;
    }
    Ok(acc)
}

/// Maps each atom `(x, w)` to `((x - t)^+, w)`.
pub fn shift_absorb(mu: &DiscreteMeasure, t: f64) -> Result<DiscreteMeasure> {
    if !(t.is_finite() && (0.0..=mu.horizon()).contains(&t)) {
        return Err(Error::Domain(format!("shift {t} outside [0, {}]", mu.horizon())));
    }
    Ok(DiscreteMeasure::from_valid(
        mu.domain(),
        mu.atoms()
            .iter()
            .map(|a| Atom { x: (a.x - t).max(0.0), weight: a.weight })
            .collect(),
    ))
}

pub fn total_mass(mu: &DiscreteMeasure) -> f64 {
    mu.atoms().iter().map(|a| a.weight).sum()
}

/// `mu((0, tau*]) / tau*`; mass absorbed at zero is excluded.
pub fn spot_proxy(mu: &DiscreteMeasure, tau_star: f64) -> Result<f64> {
    if !(tau_star.is_finite() && tau_star > 0.0 && tau_star <= mu.horizon()) {
        return Err(Error::Domain(format!("tau* must lie in (0, {}], got {tau_star}", mu.horizon())));
    }
    let mass: f64 = mu
        .atoms()
        .iter()
        .filter(|a| a.x > 0.0 && a.x <= tau_star)
        .map(|a| a.weight)
        .sum();
    Ok(mass / tau_star)
}

/// A forward curve read from disk.
#[derive(Debug, Clone)]
pub struct ForwardCurve {
    pub measure: DiscreteMeasure,
    /// Set when the file was in `date,value` format; the first row is `x = 0`.
    pub reference_date: Option<NaiveDate>,
}

/// Loads a forward curve CSV.
///
/// Accepts `x,weight` (year fractions) or `date,value` daily values. Daily
/// values become atoms at `days / 365` with weight `value / 365`, so a flat
/// curve at level `v` integrates to `v` per year of delivery. Every price
/// and weight is divided by `divisor` (use 1 for no normalization). The
/// horizon is the larger of `min_horizon` and the last atom location.
pub fn load_forward_curve(path: &Path, min_horizon: f64, divisor: f64) -> Result<ForwardCurve> {
    if !(divisor.is_finite() && divisor > 0.0) {
        return Err(Error::Data(format!("normalization divisor must be > 0, got {divisor}")));
    }
    let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(format!("{other:?}")),
        })?;
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let cols: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    let daily = match cols.as_slice() {
        [a, b] if a == "x" && b == "weight" => false,
        [a, b] if a == "date" && b == "value" => true,
        _ => return Err(parse_err(format!("expected header `x,weight` or `date,value`, got {cols:?}"))),
    };

    let mut rows: Vec<(String, f64)> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if rec.len() != 2 {
            return Err(parse_err(format!("row {} has {} fields", line + 2, rec.len())));
        }
        let value: f64 = rec[1]
            .parse()
            .map_err(|_| parse_err(format!("row {}: bad number {:?}", line + 2, &rec[1])))?;
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Data(format!("row {}: negative or non-finite value {value}", line + 2)));
        }
        rows.push((rec[0].to_string(), value));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} contains no rows", path.display())));
    }

    let mut atoms = Vec::with_capacity(rows.len());
    let mut reference_date = None;
    if daily {
        let dates = rows
            .iter()
            .enumerate()
            .map(|(i, (d, _))| {
                NaiveDate::parse_from_str(d, "%Y-%m-%d")
                    .map_err(|_| parse_err(format!("row {}: bad date {d:?}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        let start = dates[0];
        for (date, (_, value)) in dates.iter().zip(&rows) {
            let days = (*date - start).num_days();
            if days < 0 {
                return Err(Error::Data(format!("date {date} precedes the first row {start}")));
            }
            atoms.push(Atom {
                x: days as f64 / DAYS_PER_YEAR,
                weight: value / DAYS_PER_YEAR / divisor,
            });
        }
        reference_date = Some(start);
    } else {
        for (i, (x, weight)) in rows.iter().enumerate() {
            let x: f64 = x.parse().map_err(|_| parse_err(format!("row {}: bad location {x:?}", i + 2)))?;
            if !x.is_finite() || x < 0.0 {
                return Err(Error::Data(format!("row {}: location {x} is negative", i + 2)));
            }
            atoms.push(Atom { x, weight: weight / divisor });
        }
    }
    let max_x = atoms.iter().map(|a| a.x).fold(0.0, f64::max);
    let mut horizon = min_horizon.max(max_x);
    if horizon <= 0.0 {
        horizon = 1.0 / DAYS_PER_YEAR;
    }
    let measure = DiscreteMeasure::new(DomainConfig::new(horizon)?, atoms)?;
    Ok(ForwardCurve { measure, reference_date })
}

/// Writes a measure in the `x,weight` format read by [`load_forward_curve`].
pub fn write_forward_curve(path: &Path, mu: &DiscreteMeasure) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    w.write_record(["x", "weight"]).map_err(|e| Error::Io(e.into()))?;
    for a in mu.atoms() {
        w.write_record([format!("{:.17e}", a.x), format!("{:.17e}", a.weight)])
            .map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn measure(pairs: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::from_pairs(1.0, pairs).unwrap()
    }

    #[test]
    fn pair_examples() {
        let mu = measure(&[(0.5, 2.0)]);
        assert_abs_diff_eq!(pair(&TestFunction::square(), &mu).unwrap(), 0.5, epsilon = 1e-15);
        let mu = measure(&[(0.1, 1.0), (0.7, 1.5), (0.7, 0.5)]);
        assert_abs_diff_eq!(pair(&TestFunction::constant(1.0), &mu).unwrap(), 3.0, epsilon = 1e-15);
        assert_eq!(pair(&TestFunction::square(), &DiscreteMeasure::empty(mu.domain())).unwrap(), 0.0);
    }

    #[test]
    fn pair_rejects_non_finite_values() {
        let phi = TestFunction::new("1/x", |x| 1.0 / x, |x| -1.0 / (x * x));
        let mu = measure(&[(0.0, 1.0)]);
        assert!(matches!(pair(&phi, &mu), Err(Error::Evaluation(_))));
    }

    #[test]
    fn invalid_atoms_rejected() {
        assert!(DiscreteMeasure::from_pairs(1.0, &[(1.5, 1.0)]).is_err());
        assert!(DiscreteMeasure::from_pairs(1.0, &[(0.5, -1.0)]).is_err());
        assert!(DiscreteMeasure::from_pairs(1.0, &[(f64::NAN, 1.0)]).is_err());
        assert!(DiscreteMeasure::from_pairs(0.0, &[]).is_err());
    }

    #[test]
    fn shift_absorb_examples() {
        let mu = measure(&[(0.5, 1.0), (0.1, 1.0)]);
        let s = shift_absorb(&mu, 0.2).unwrap();
        assert_abs_diff_eq!(s.atoms()[0].x, 0.3, epsilon = 1e-15);
        assert_eq!(s.atoms()[1].x, 0.0);
        assert_eq!(shift_absorb(&mu, 0.0).unwrap(), mu);
        let end = shift_absorb(&mu, 1.0).unwrap();
        assert!(end.atoms().iter().all(|a| a.x == 0.0));
        assert_eq!(total_mass(&end), 2.0);
        assert!(matches!(shift_absorb(&mu, 1.01), Err(Error::Domain(_))));
        assert!(matches!(shift_absorb(&mu, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn total_mass_and_normalize() {
        let d = DomainConfig::new(1.0).unwrap();
        assert_eq!(total_mass(&DiscreteMeasure::empty(d)), 0.0);
        assert_eq!(total_mass(&measure(&[(0.3, 2.5)])), 2.5);
        let mu = measure(&[(0.3, 1.0), (0.3 + 1e-13, 2.0), (0.1, 0.5), (0.2, 0.0)]);
        let n = mu.normalize();
        assert_eq!(n.len(), 2);
        assert_abs_diff_eq!(total_mass(&n), total_mass(&mu), epsilon = 1e-15);
    }

    #[test]
    fn spot_proxy_examples() {
        assert_abs_diff_eq!(spot_proxy(&measure(&[(0.05, 1.0)]), 0.1).unwrap(), 10.0, epsilon = 1e-12);
        assert_eq!(spot_proxy(&measure(&[(0.0, 5.0)]), 0.1).unwrap(), 0.0);
        assert_eq!(spot_proxy(&DiscreteMeasure::empty(DomainConfig::new(1.0).unwrap()), 0.1).unwrap(), 0.0);
        assert!(matches!(spot_proxy(&measure(&[(0.05, 1.0)]), 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn d1_certification() {
        assert!(TestFunction::square().is_d1());
        assert!(TestFunction::gaussian(0.5).is_d1());
        assert!(TestFunction::cosine(3.0).is_d1());
        assert!(TestFunction::polynomial(vec![1.0, 0.0, -2.0]).is_d1());
        assert!(!TestFunction::polynomial(vec![0.0, 1.0]).is_d1());
        assert!(matches!(
            TestFunction::polynomial(vec![0.0, 1.0]).require_d1(),
            Err(Error::NotD1(_))
        ));
        let p = TestFunction::polynomial(vec![1.0, 0.0, 3.0]);
        assert_abs_diff_eq!(p.eval(2.0), 13.0);
        assert_abs_diff_eq!(p.deriv(2.0), 12.0);
    }

    #[test]
    fn daily_curve_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let start = NaiveDate::from_ymd_opt(2022, 3, 22).unwrap();
        let mut s = String::from("date,value\n");
        for k in 0..71 {
            let d = start + chrono::Days::new(k);
            s.push_str(&format!("{},236.49\n", d.format("%Y-%m-%d")));
        }
        std::fs::write(&path, s).unwrap();
        let curve = load_forward_curve(&path, 0.0, 236.49).unwrap();
        assert_eq!(curve.measure.len(), 71);
        assert_eq!(curve.reference_date, Some(start));
        for a in curve.measure.atoms() {
            assert_abs_diff_eq!(a.weight * DAYS_PER_YEAR, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(curve.measure.horizon(), 70.0 / 365.0, epsilon = 1e-15);
    }

    #[test]
    fn loader_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "foo,bar\n1,2\n").unwrap();
        assert!(matches!(load_forward_curve(&bad, 1.0, 1.0), Err(Error::Parse { .. })));
        std::fs::write(&bad, "x,weight\n0.1,-2\n").unwrap();
        assert!(matches!(load_forward_curve(&bad, 1.0, 1.0), Err(Error::Data(_))));
        std::fs::write(&bad, "x,weight\n0.1,abc\n").unwrap();
        assert!(matches!(load_forward_curve(&bad, 1.0, 1.0), Err(Error::Parse { .. })));
        let missing = dir.path().join("missing.csv");
        assert!(matches!(load_forward_curve(&missing, 1.0, 1.0), Err(Error::Io(_))));
    }

    #[test]
    fn curve_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let mu = measure(&[(0.0, 0.25), (1.0 / 3.0, 1.0 / 7.0), (0.9, 2.0)]);
        write_forward_curve(&path, &mu).unwrap();
        let back = load_forward_curve(&path, 1.0, 1.0).unwrap().measure;
        assert_eq!(back, mu);
    }

    fn arb_measure() -> impl Strategy<Value = DiscreteMeasure> {
        prop::collection::vec((0.0..=1.0f64, 0.0..5.0f64), 0..12)
            .prop_map(|v| DiscreteMeasure::from_pairs(1.0, &v).unwrap())
    }

    proptest! {
        #[test]
        fn shift_is_a_semigroup(mu in arb_measure(), s in 0.0..0.5f64, t in 0.0..0.5f64) {
            let a = shift_absorb(&shift_absorb(&mu, s).unwrap(), t).unwrap();
            let b = shift_absorb(&mu, s + t).unwrap();
            for (p, q) in a.atoms().iter().zip(b.atoms()) {
                prop_assert!((p.x - q.x).abs() <= 1e-12);
                prop_assert_eq!(p.weight, q.weight);
            }
        }

        #[test]
        fn shift_shrinks_support(mu in arb_measure(), t in 0.0..=1.0f64) {
            let s = shift_absorb(&mu, t).unwrap();
            prop_assert!(s.atoms().iter().all(|a| a.x <= 1.0 - t + 1e-15 || a.x == 0.0));
            prop_assert!((total_mass(&s) - total_mass(&mu)).abs() <= 1e-12);
        }

        #[test]
        fn pairing_commutes_with_transport(mu in arb_measure(), t in 0.0..=1.0f64) {
            let phi = TestFunction::gaussian(0.3);
            let lhs = pair(&phi, &shift_absorb(&mu, t).unwrap()).unwrap();
            let rhs = pair(&phi.shifted(t), &mu).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn pairing_is_monotone_and_linear(mu in arb_measure(), c in 0.0..3.0f64) {
            let phi = TestFunction::square();
            let p = pair(&phi, &mu).unwrap();
            prop_assert!(p >= 0.0);
            let scaled = pair(&phi, &mu.scaled(c).unwrap()).unwrap();
            prop_assert!((scaled - c * p).abs() <= 1e-12 * (1.0 + p.abs() * c));
        }
    }
}
