//! PIT extraction, local PIT-CDF maps, diagnostic curves and the local
//! discrepancy score (LDS).

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distributions::{Kumaraswamy, ScalarDistribution};
use crate::{Error, Real, Result};

/// Default number of α grid points for diagnostics (endpoints included).
pub const DEFAULT_GRID: usize = 101;

/// Calibration pairs `(xᵢ, yᵢ)` with row-major features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CalibrationSet<T: Real> {
    features: Vec<T>,
    dim: usize,
    responses: Vec<T>,
}

impl<T: Real> CalibrationSet<T> {
    pub fn new(rows: Vec<Vec<T>>, responses: Vec<T>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::from_flat(rows.into_iter().flatten().collect(), dim, responses)
    }

    pub fn from_flat(features: Vec<T>, dim: usize, responses: Vec<T>) -> Result<Self> {
        let n = responses.len();
        if n == 0 {
            return Err(Error::param("responses", "calibration set is empty"));
        }
        if features.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                got: features.len(),
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "features",
                format!("non-finite entry in row {}", i / dim.max(1)),
            ));
        }
        if let Some(i) = responses.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("responses", format!("non-finite entry in row {i}")));
        }
        Ok(Self {
            features,
            dim,
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn responses(&self) -> &[T] {
        &self.responses
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut f = Vec::with_capacity(indices.len() * self.dim);
        let mut r = Vec::with_capacity(indices.len());
        for &i in indices {
            f.extend_from_slice(self.row(i));
            r.push(self.responses[i]);
        }
        Self::from_flat(f, self.dim, r)
    }
}

/// PIT values `zᵢ = F̂(yᵢ | xᵢ)`, all in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PitSample<T: Real> {
    z: Vec<T>,
}

impl<T: Real> PitSample<T> {
    pub fn new(z: Vec<T>) -> Result<Self> {
        if let Some((i, v)) = z
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= T::zero() && **v <= T::one()))
        {
            return Err(Error::param(
                "z",
                format!("PIT value {v} at index {i} is outside [0, 1]"),
            ));
        }
        Ok(Self { z })
    }

    pub fn values(&self) -> &[T] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// A covariate-conditional predictive distribution `x ↦ F̂(·|x)`.
pub trait ConditionalFamily<T: Real>: Sync {
    type Dist: ScalarDistribution<T>;

    fn at(&self, x: &[T]) -> Result<Self::Dist>;
}

/// A family that ignores the covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantFamily<D>(pub D);

impl<T: Real, D: ScalarDistribution<T> + Clone + Sync> ConditionalFamily<T> for ConstantFamily<D> {
    type Dist = D;

    fn at(&self, _x: &[T]) -> Result<D> {
        Ok(self.0.clone())
    }
}

/// Evaluates the base CDF at every calibration response.
pub fn compute_pit<T, B>(base: &B, calib: &CalibrationSet<T>) -> Result<PitSample<T>>
where
    T: Real,
    B: ConditionalFamily<T> + ?Sized,
{
    let mut z = Vec::with_capacity(calib.len());
    for (i, (x, &y)) in calib.rows().zip(calib.responses()).enumerate() {
        let dist = base.at(x).map_err(|e| Error::RowEvaluation {
            row: i,
            reason: e.to_string(),
        })?;
        let v = dist.cdf(y);
        if !(v >= T::zero() && v <= T::one()) {
            return Err(Error::RowEvaluation {
                row: i,
                reason: format!("base CDF returned {v}"),
            });
        }
        z.push(v);
    }
    PitSample::new(z)
}

/// PIT-CDF `α ↦ Ĝ(α|x)` at one fixed covariate value.
pub trait LocalPitMap<T: Real>: Send + Sync {
    /// Ĝ(α). Callers pass α ∈ [0, 1].
    fn g(&self, alpha: T) -> T;

    /// Closed-form density ∂Ĝ/∂α, when the map has one.
    fn density(&self, _alpha: T) -> Option<T> {
        None
    }

    /// Closed-form log-density at `α`, given `ln α` and `ln(1 − α)`.
    fn ln_density(&self, ln_alpha: T, ln_c: T) -> Option<T> {
        let at = if ln_alpha <= -T::LN_2() {
            ln_alpha.exp()
        } else {
            T::one() - ln_c.exp()
        };
        self.density(at).map(|d| d.ln())
    }

    /// Set when the map had to fall back to the identity.
    fn is_fallback(&self) -> bool {
        false
    }
}

/// A covariate-dependent PIT-CDF model.
pub trait PitMap<T: Real>: Send + Sync {
    /// Expected covariate dimension, if fixed.
    fn input_dim(&self) -> Option<usize> {
        None
    }

    /// Binds the map to one covariate value.
    fn localize(&self, x: &[T]) -> Result<Box<dyn LocalPitMap<T> + '_>>;

    /// Ĝ(α|x) with α validated.
    fn g(&self, alpha: T, x: &[T]) -> Result<T> {
        check_alpha(alpha)?;
        Ok(self.localize(x)?.g(alpha))
    }
}

pub(crate) fn check_alpha<T: Real>(alpha: T) -> Result<()> {
    if alpha >= T::zero() && alpha <= T::one() {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            value: alpha.as_f64(),
            domain: "[0, 1]",
        })
    }
}

pub(crate) fn check_dim<V>(expected: Option<usize>, x: &[V]) -> Result<()> {
    match expected {
        Some(d) if d != x.len() => Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        }),
        _ => Ok(()),
    }
}

impl<T: Real, M: PitMap<T> + ?Sized> PitMap<T> for &M {
    fn input_dim(&self) -> Option<usize> {
        (**self).input_dim()
    }
    fn localize(&self, x: &[T]) -> Result<Box<dyn LocalPitMap<T> + '_>> {
        (**self).localize(x)
    }
}

impl<T: Real> LocalPitMap<T> for Kumaraswamy<T> {
    fn g(&self, alpha: T) -> T {
        self.cdf(alpha)
    }

    fn density(&self, alpha: T) -> Option<T> {
        Some(self.pdf(alpha))
    }

    fn ln_density(&self, ln_alpha: T, ln_c: T) -> Option<T> {
        Some(self.ln_pdf_from_logs(ln_alpha, ln_c))
    }
}

/// Ĝ(α|x) = α: the base is taken as calibrated everywhere.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityMap;

impl<T: Real> LocalPitMap<T> for IdentityMap {
    fn g(&self, alpha: T) -> T {
        alpha
    }

    fn density(&self, _alpha: T) -> Option<T> {
        Some(T::one())
    }
}

impl<T: Real> PitMap<T> for IdentityMap {
    fn localize(&self, _x: &[T]) -> Result<Box<dyn LocalPitMap<T> + '_>> {
        Ok(Box::new(IdentityMap))
    }
}

/// The same Kumaraswamy member at every x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ConstantKumaraswamy<T: Real>(pub Kumaraswamy<T>);

impl<T: Real> PitMap<T> for ConstantKumaraswamy<T> {
    fn localize(&self, _x: &[T]) -> Result<Box<dyn LocalPitMap<T> + '_>> {
        Ok(Box::new(self.0))
    }
}

/// A PIT map given by closures, used for analytic oracles.
pub struct FnPitMap<G, D = fn(f64, &[f64]) -> f64> {
    g: G,
    density: Option<D>,
}

impl<G> FnPitMap<G> {
    pub fn new(g: G) -> Self {
        Self { g, density: None }
    }
}

impl<G, D> FnPitMap<G, D> {
    pub fn with_density(g: G, density: D) -> Self {
        Self {
            g,
            density: Some(density),
        }
    }
}

struct BoundFn<'a, T, G, D> {
    map: &'a FnPitMap<G, D>,
    x: Vec<T>,
}

impl<T, G, D> LocalPitMap<T> for BoundFn<'_, T, G, D>
where
    T: Real,
    G: Fn(T, &[T]) -> T + Send + Sync,
    D: Fn(T, &[T]) -> T + Send + Sync,
{
    fn g(&self, alpha: T) -> T {
        (self.map.g)(alpha, &self.x)
    }

    fn density(&self, alpha: T) -> Option<T> {
        self.map.density.as_ref().map(|d| d(alpha, &self.x))
    }
}

impl<T, G, D> PitMap<T> for FnPitMap<G, D>
where
    T: Real,
    G: Fn(T, &[T]) -> T + Send + Sync,
    D: Fn(T, &[T]) -> T + Send + Sync,
{
    fn localize(&self, x: &[T]) -> Result<Box<dyn LocalPitMap<T> + '_>> {
        Ok(Box::new(BoundFn {
            map: self,
            x: x.to_vec(),
        }))
    }
}

/// Coarse shape of a PIT-CDF curve relative to the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    Calibrated,
    /// Base shifted toward larger outcomes: curve above the diagonal.
    PositiveBias,
    NegativeBias,
    /// Base too wide: curve below then above the diagonal.
    Overdispersion,
    Underdispersion,
}

impl fmt::Display for FailureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureMode::Calibrated => "calibrated",
            FailureMode::PositiveBias => "positive bias",
            FailureMode::NegativeBias => "negative bias",
            FailureMode::Overdispersion => "overdispersion",
            FailureMode::Underdispersion => "underdispersion",
        })
    }
}

/// `{(α, Ĝ(α|x))}` over a grid in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DiagnosticCurve<T: Real> {
    pub alphas: Vec<T>,
    pub values: Vec<T>,
    pub x: Vec<T>,
    /// True when the model fell back to the identity at this x.
    #[serde(default)]
    pub fallback: bool,
}

impl<T: Real> DiagnosticCurve<T> {
    /// Advisory label from the signed mean deviation on [0, ½] and [½, 1].
    pub fn failure_mode(&self) -> FailureMode {
        let half = T::of(0.5);
        let (mut lo, mut nlo, mut hi, mut nhi) = (T::zero(), 0usize, T::zero(), 0usize);
        for (&a, &v) in self.alphas.iter().zip(&self.values) {
            let d = v - a;
            if a <= half {
                lo += d;
                nlo += 1;
            }
            if a >= half {
                hi += d;
                nhi += 1;
            }
        }
        let lo = if nlo > 0 { lo / T::of_usize(nlo) } else { T::zero() };
        let hi = if nhi > 0 { hi / T::of_usize(nhi) } else { T::zero() };
        let tol = T::of(0.01);
        if lo.abs() < tol && hi.abs() < tol {
            return FailureMode::Calibrated;
        }
        let pos = |v: T| v > T::zero();
        match (pos(lo), pos(hi)) {
            (true, true) => FailureMode::PositiveBias,
            (false, false) => FailureMode::NegativeBias,
            (false, true) => FailureMode::Overdispersion,
            (true, false) => FailureMode::Underdispersion,
        }
    }

    /// Writes `alpha,g_hat` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["alpha", "g_hat"])?;
        for (a, v) in self.alphas.iter().zip(&self.values) {
            out.write_record([a.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `grid_size` evenly spaced points over [0, 1], endpoints exact.
pub fn unit_grid<T: Real>(grid_size: usize) -> Vec<T> {
    let last = grid_size.saturating_sub(1).max(1);
    (0..grid_size)
        .map(|i| {
            if i == last {
                T::one()
            } else {
                T::of_usize(i) / T::of_usize(last)
            }
        })
        .collect()
}

/// Evaluates the model along an evenly spaced α grid at `x`.
pub fn diagnostic_curve<T, M>(model: &M, x: &[T], grid_size: usize) -> Result<DiagnosticCurve<T>>
where
    T: Real,
    M: PitMap<T> + ?Sized,
{
    if grid_size < 2 {
        return Err(Error::param("grid_size", "need at least 2 grid points"));
    }
    let local = model.localize(x)?;
    let alphas = unit_grid(grid_size);
    let values = alphas.iter().map(|&a| local.g(a).clamp_unit()).collect();
    Ok(DiagnosticCurve {
        alphas,
        values,
        x: x.to_vec(),
        fallback: local.is_fallback(),
    })
}

/// Mean squared deviation of the curve from the diagonal.
pub fn lds<T: Real>(curve: &DiagnosticCurve<T>) -> Result<T> {
    if curve.alphas.is_empty() || curve.alphas.len() != curve.values.len() {
        return Err(Error::param("curve", "empty or ragged diagnostic grid"));
    }
    let sum: T = curve
        .alphas
        .iter()
        .zip(&curve.values)
        .map(|(&a, &v)| (v - a) * (v - a))
        .sum();
    Ok(sum / T::of_usize(curve.alphas.len()))
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic<T: Real>(sample: &[T], cdf: impl Fn(T) -> T) -> T {
    let mut s: Vec<T> = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in sample"));
    let n = T::of_usize(s.len());
    let mut d = T::zero();
    for (i, &v) in s.iter().enumerate() {
        let f = cdf(v);
        let above = T::of_usize(i + 1) / n - f;
        let below = f - T::of_usize(i) / n;
        d = d.max(above).max(below);
    }
    d
}

/// KS distance of a PIT sample from Uniform[0, 1].
pub fn ks_uniform<T: Real>(pit: &PitSample<T>) -> T {
    ks_statistic(pit.values(), |v| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Gaussian;

    fn curve(alphas: Vec<f64>, values: Vec<f64>) -> DiagnosticCurve<f64> {
        DiagnosticCurve {
            alphas,
            values,
            x: vec![],
            fallback: false,
        }
    }

    #[test]
    fn pit_examples() {
        let base = ConstantFamily(Gaussian::standard());
        let calib = CalibrationSet::<f64>::new(vec![vec![0.0], vec![1.0]], vec![0.0, 1.96]).unwrap();
        let z = compute_pit(&base, &calib).unwrap();
        assert_eq!(z.values()[0], 0.5);
        assert!((z.values()[1] - 0.9750).abs() < 1e-4);
    }

    #[test]
    fn pit_reports_offending_row() {
        struct Picky;
        impl ConditionalFamily<f64> for Picky {
            type Dist = Gaussian<f64>;
            fn at(&self, x: &[f64]) -> Result<Gaussian<f64>> {
                Gaussian::new(0.0, x[0])
            }
        }
        let calib =
            CalibrationSet::new(vec![vec![1.0], vec![2.0], vec![-1.0]], vec![0.0, 0.0, 0.0]).unwrap();
        match compute_pit(&Picky, &calib) {
            Err(Error::RowEvaluation { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn calibration_set_validation() {
        assert!(CalibrationSet::<f64>::new(vec![], vec![]).is_err());
        assert!(CalibrationSet::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]).is_err());
        assert!(CalibrationSet::new(vec![vec![f64::NAN]], vec![0.0]).is_err());
        assert!(CalibrationSet::new(vec![vec![1.0]], vec![f64::INFINITY]).is_err());
        let c = CalibrationSet::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![5.0, 6.0]).unwrap();
        assert_eq!(c.row(1), &[3.0, 4.0]);
        assert_eq!(c.subset(&[1]).unwrap().responses(), &[6.0]);
    }

    #[test]
    fn identity_and_kumaraswamy_curves() {
        let c = diagnostic_curve(&IdentityMap, &[0.0_f64], 3).unwrap();
        assert_eq!(c.values, vec![0.0, 0.5, 1.0]);
        assert_eq!(lds(&c).unwrap(), 0.0);

        let k = ConstantKumaraswamy(Kumaraswamy::new(2.0, 1.0).unwrap());
        let c = diagnostic_curve(&k, &[0.0_f64], DEFAULT_GRID).unwrap();
        assert_eq!(c.alphas.len(), 101);
        for (a, v) in c.alphas.iter().zip(&c.values) {
            assert!((v - a * a).abs() < 1e-14);
        }
        assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(diagnostic_curve(&k, &[0.0_f64], 1).is_err());
    }

    #[test]
    fn lds_hand_value() {
        let alphas = vec![0.25, 0.5, 0.75];
        let values: Vec<f64> = alphas.iter().map(|a| a * a).collect();
        let v = lds(&curve(alphas, values)).unwrap();
        let expect = (0.1875_f64.powi(2) + 0.25_f64.powi(2) + 0.1875_f64.powi(2)) / 3.0;
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.04427).abs() < 1e-5);
        assert!(lds(&curve(vec![], vec![])).is_err());
    }

    #[test]
    fn failure_mode_labels() {
        let a = unit_grid::<f64>(101);
        let label = |f: &dyn Fn(f64) -> f64| {
            curve(a.clone(), a.iter().map(|&v| f(v)).collect()).failure_mode()
        };
        assert_eq!(label(&|v| v), FailureMode::Calibrated);
        assert_eq!(label(&|v| v.sqrt()), FailureMode::PositiveBias);
        assert_eq!(label(&|v| v * v), FailureMode::NegativeBias);
        // Kumaraswamy(3, 3) concentrates PIT mass at the centre: the base is too wide.
        let k = Kumaraswamy::new(3.0, 3.0).unwrap();
        assert_eq!(label(&|v| k.cdf(v)), FailureMode::Overdispersion);
        let k = Kumaraswamy::new(0.4, 0.4).unwrap();
        assert_eq!(label(&|v| k.cdf(v)), FailureMode::Underdispersion);
    }

    #[test]
    fn ks_of_perfect_grid() {
        let n = 1000;
        let z: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let p = PitSample::new(z).unwrap();
        assert!((ks_uniform(&p) - 0.5 / n as f64).abs() < 1e-12);
        assert!(PitSample::new(vec![1.5_f64]).is_err());
    }

    #[test]
    fn alpha_validation() {
        assert!(PitMap::g(&IdentityMap, 1.2_f64, &[]).is_err());
        assert_eq!(PitMap::g(&IdentityMap, 0.3_f64, &[]).unwrap(), 0.3);
    }
}
