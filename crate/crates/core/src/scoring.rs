//! Scoring rules and integrated errors for predictive distributions.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::ScalarDistribution;
use crate::pit::LocalPitMap;
use crate::quadrature::adaptive_simpson;
use crate::{Error, Real, Result};

/// Default number of CRPS grid cells.
pub const DEFAULT_CRPS_GRID: usize = 1024;
/// Default number of α midpoints for pinball integration.
pub const DEFAULT_PINBALL_GRID: usize = 201;
/// Default number of p midpoints for the ISE.
pub const DEFAULT_ISE_GRID: usize = 2000;
/// Tail levels bounding the default CRPS grid.
const CRPS_TAIL: f64 = 1e-4;
/// Tail levels truncating the mean integral.
const MEAN_TAIL: f64 = 1e-12;
/// Upper bound on `1/f̂` inside the ISE integrand.
pub const MAX_INVERSE_DENSITY: f64 = 1e8;

/// A weight function on outcomes (threshold weight) or on levels (quantile weight).
pub type WeightFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

#[derive(Clone, Default)]
pub enum Weight<T> {
    #[default]
    None,
    /// `u(t)` multiplying the squared CDF error at threshold `t`.
    Threshold(WeightFn<T>),
    /// `v(α)` multiplying the pinball loss at level `α`.
    Quantile(WeightFn<T>),
}

impl<T> fmt::Debug for Weight<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weight::None => "None",
            Weight::Threshold(_) => "Threshold(..)",
            Weight::Quantile(_) => "Quantile(..)",
        })
    }
}

/// Grid and weighting used by [`crps`].
///
/// Without explicit bounds the grid spans the forecast's central
/// `1 − 2·10⁻⁴` mass together with the outcome, padded by one cell.
#[derive(Clone, Debug)]
pub struct ScoreConfig<T> {
    pub bounds: Option<(T, T)>,
    pub grid_size: usize,
    pub weight: Weight<T>,
}

impl<T: Real> Default for ScoreConfig<T> {
    fn default() -> Self {
        Self {
            bounds: None,
            grid_size: DEFAULT_CRPS_GRID,
            weight: Weight::None,
        }
    }
}

impl<T: Real> ScoreConfig<T> {
    pub fn with_bounds(lower: T, upper: T, grid_size: usize) -> Result<Self> {
        let cfg = Self {
            bounds: Some((lower, upper)),
            grid_size,
            weight: Weight::None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 8 {
            return Err(Error::param("grid_size", "must be at least 8"));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::param("bounds", "need finite lower < upper"));
            }
        }
        Ok(())
    }
}

/// Continuous ranked probability score of `dist` at outcome `y`.
///
/// Unweighted and threshold-weighted scores use a midpoint rule on the
/// outcome grid, with the cell containing `y` split at `y`. The
/// quantile-weighted score integrates the weighted pinball loss.
pub fn crps<T, D>(dist: &D, y: T, cfg: &ScoreConfig<T>) -> Result<T>
where
    T: Real,
    D: ScalarDistribution<T> + ?Sized,
{
    cfg.validate()?;
    if !y.is_finite() {
        return Err(Error::OutOfDomain {
            value: y.as_f64(),
            domain: "finite reals",
        });
    }
    if let Weight::Quantile(v) = &cfg.weight {
        return weighted_pinball_crps(dist, y, cfg.grid_size, Some(v.as_ref()));
    }
    let n = cfg.grid_size;
    let (lo, hi) = match cfg.bounds {
        Some((lo, hi)) if y > lo && y < hi => (lo, hi),
        Some((lo, hi)) => {
            // Widen once so the outcome sits inside with a one-cell margin.
            let step = (hi - lo) / T::of_usize(n);
            let lo = lo.min(y - step);
            let hi = hi.max(y + step);
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::OutOfDomain {
                    value: y.as_f64(),
                    domain: "CRPS grid",
                });
            }
            (lo, hi)
        }
        None => {
            let ql = dist.quantile(T::of(CRPS_TAIL))?;
            let qh = dist.quantile(T::one() - T::of(CRPS_TAIL))?;
            let (a, b) = (ql.min(y), qh.max(y));
            if !(a.is_finite() && b.is_finite()) || a >= b {
                return Err(Error::Invalid("forecast has no usable CRPS support".into()));
            }
            let margin = (b - a) / T::of_usize(n - 2);
            (a - margin, b + margin)
        }
    };
    let step = (hi - lo) / T::of_usize(n);
    let u = |t: T| match &cfg.weight {
        Weight::Threshold(u) => u(t),
        _ => T::one(),
    };
    let term = |t: T| {
        let ind = if y <= t { T::one() } else { T::zero() };
        let d = dist.cdf(t) - ind;
        d * d * u(t)
    };
    let half = T::of(0.5);
    let mut total = T::zero();
    for k in 0..n {
        let a = lo + T::of_usize(k) * step;
        let b = if k + 1 == n { hi } else { a + step };
        if y > a && y < b {
            total += term(a + (y - a) * half) * (y - a) + term(y + (b - y) * half) * (b - y);
        } else {
            total += term(a + (b - a) * half) * (b - a);
        }
    }
    Ok(total)
}

/// Pinball loss `(q_τ − y)(1{y ≤ q_τ} − τ)` of the τ-quantile of `dist`.
pub fn pinball<T, D>(dist: &D, y: T, tau: T) -> Result<T>
where
    T: Real,
    D: ScalarDistribution<T> + ?Sized,
{
    if !(tau > T::zero() && tau < T::one()) {
        return Err(Error::OutOfDomain {
            value: tau.as_f64(),
            domain: "(0, 1)",
        });
    }
    Ok(pinball_at(dist.quantile(tau)?, y, tau))
}

/// Pinball loss for a given quantile value.
pub fn pinball_at<T: Real>(q: T, y: T, tau: T) -> T {
    let ind = if y <= q { T::one() } else { T::zero() };
    (q - y) * (ind - tau)
}

/// `2∫₀¹ pinball dα` on `grid_size` midpoints.
pub fn crps_via_pinball<T, D>(dist: &D, y: T, grid_size: usize) -> Result<T>
where
    T: Real,
    D: ScalarDistribution<T> + ?Sized,
{
    weighted_pinball_crps(dist, y, grid_size, None)
}

fn weighted_pinball_crps<T, D>(dist: &D, y: T, n: usize, v: Option<&(dyn Fn(T) -> T + Send + Sync)>) -> Result<T>
where
    T: Real,
    D: ScalarDistribution<T> + ?Sized,
{
    if n == 0 {
        return Err(Error::param("grid_size", "must be positive"));
    }
    let mut total = T::zero();
    for k in 0..n {
        let tau = (T::of_usize(k) + T::of(0.5)) / T::of_usize(n);
        let w = v.map_or(T::one(), |v| v(tau));
        total += pinball(dist, y, tau)? * w;
    }
    Ok(T::of(2.0) * total / T::of_usize(n))
}

/// ISE between recalibrated and true CDFs, computed in probability space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IseResult<T> {
    pub ise: T,
    /// Grid points where `1/f̂` was capped.
    pub capped: usize,
}

/// `∫₀¹ (Ĝ(p) − G(p))² / f̂(F̂⁻¹(p)) dp` by the midpoint rule.
pub fn ise_pit<T, D>(
    g_hat: &dyn LocalPitMap<T>,
    g_true: &dyn LocalPitMap<T>,
    base: &D,
    grid_size: usize,
) -> Result<IseResult<T>>
where
    T: Real,
    D: ScalarDistribution<T> + ?Sized,
{
    if grid_size == 0 {
        return Err(Error::param("grid_size", "must be positive"));
    }
    let cap = T::of(MAX_INVERSE_DENSITY);
    let mut total = T::zero();
    let mut capped = 0;
    for k in 0..grid_size {
        let p = (T::of_usize(k) + T::of(0.5)) / T::of_usize(grid_size);
        let d = g_hat.g(p) - g_true.g(p);
        if d == T::zero() {
            continue;
        }
        let f = base.pdf(base.quantile(p)?);
        let inv = if f.is_finite() && f * cap > T::one() {
            T::one() / f
        } else {
            capped += 1;
            cap
        };
        total += d * d * inv;
    }
    Ok(IseResult {
        ise: total / T::of_usize(grid_size),
        capped,
    })
}

/// Mean of a distribution by quadrature of its CDF about the median.
pub fn distribution_mean<T, D>(dist: &D) -> Result<T>
where
    T: Real,
    D: ScalarDistribution<T> + ?Sized,
{
    let c = dist.quantile(T::of(0.5))?;
    let lo = dist.quantile(T::of(MEAN_TAIL))?;
    let hi = dist.quantile(T::one() - T::of(MEAN_TAIL))?;
    let tol = T::of(1e-9) * (hi - lo).max(T::one());
    let upper = if hi > c {
        adaptive_simpson(|t| T::one() - dist.cdf(t), c, hi, tol, 50)?
    } else {
        T::zero()
    };
    let lower = if c > lo {
        adaptive_simpson(|t| dist.cdf(t), lo, c, tol, 50)?
    } else {
        T::zero()
    };
    Ok(c + upper - lower)
}

/// Root mean squared error of distribution means against `truths`.
pub fn rmse_of_mean<T, D>(dists: &[D], truths: &[T]) -> Result<T>
where
    T: Real,
    D: ScalarDistribution<T> + Sync,
{
    if dists.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: dists.len(),
            got: truths.len(),
        });
    }
    if dists.is_empty() {
        return Err(Error::DegenerateData("no distributions to score".into()));
    }
    let sq: Vec<T> = dists
        .par_iter()
        .zip(truths.par_iter())
        .map(|(d, &t)| distribution_mean(d).map(|m| (m - t) * (m - t)))
        .collect::<Result<_>>()?;
    Ok((sq.into_iter().sum::<T>() / T::of_usize(dists.len())).sqrt())
}

/// Mean CRPS over paired forecasts and outcomes, evaluated in parallel.
pub fn mean_crps<T, D>(dists: &[D], ys: &[T], cfg: &ScoreConfig<T>) -> Result<T>
where
    T: Real,
    D: ScalarDistribution<T> + Sync,
{
    if dists.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: dists.len(),
            got: ys.len(),
        });
    }
    if dists.is_empty() {
        return Err(Error::DegenerateData("no distributions to score".into()));
    }
    let scores: Vec<T> = dists
        .par_iter()
        .zip(ys.par_iter())
        .map(|(d, &y)| crps(d, y, cfg))
        .collect::<Result<_>>()?;
    Ok(scores.into_iter().sum::<T>() / T::of_usize(dists.len()))
}

/// `CRPS(a, y) − CRPS(b, y)` without forming either score.
///
/// Integrates `(F_a − F_b)(F_a + F_b − 2·1{t ≥ y})`, which vanishes outside
/// both supports, so the difference stays exact when `y` is far enough out
/// that each score on its own rounds to `|y|`.
pub fn crps_difference<T, A, B>(a: &A, b: &B, y: T) -> Result<T>
where
    T: Real,
    A: ScalarDistribution<T> + ?Sized,
    B: ScalarDistribution<T> + ?Sized,
{
    if !y.is_finite() {
        return Err(Error::OutOfDomain {
            value: y.as_f64(),
            domain: "finite reals",
        });
    }
    let lo = a.quantile(T::of(MEAN_TAIL))?.min(b.quantile(T::of(MEAN_TAIL))?);
    let hi = a
        .quantile(T::one() - T::of(MEAN_TAIL))?
        .max(b.quantile(T::one() - T::of(MEAN_TAIL))?);
    let tol = T::of(1e-9) * (hi - lo).max(T::one());
    let piece = |from: T, to: T, step: T| {
        adaptive_simpson(
            |t| {
                let (fa, fb) = (a.cdf(t), b.cdf(t));
                (fa - fb) * (fa + fb - step)
            },
            from,
            to,
            tol,
            50,
        )
    };
    let two = T::of(2.0);
    if y <= lo {
        piece(lo, hi, two)
    } else if y >= hi {
        piece(lo, hi, T::zero())
    } else {
        Ok(piece(lo, y, T::zero())? + piece(y, hi, two)?)
    }
}

/// `(m_a − y)² − (m_b − y)²` factored so that a huge `y` does not swamp
/// the difference between the two point forecasts.
pub fn squared_error_difference<T: Real>(m_a: T, m_b: T, y: T) -> T {
    (m_a - m_b) * ((m_a - y) + (m_b - y))
}

/// `(method − base) / base × 100`.
pub fn percent_change(method: f64, base: f64) -> f64 {
    (method - base) / base * 100.0
}

/// One cell of a score table; missing cells have no value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub category: String,
    pub method: String,
    pub metric: String,
    pub value: Option<f64>,
    pub pct_change_vs_base: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Looks up a cell value.
    pub fn get(&self, category: &str, method: &str, metric: &str) -> Option<&ScoreRow> {
        self.rows
            .iter()
            .find(|r| r.category == category && r.method == method && r.metric == metric)
    }

    /// Fills `pct_change_vs_base` from the rows whose method is `base`.
    pub fn fill_percent_change(&mut self, base: &str) {
        let lookup: Vec<((String, String), Option<f64>)> = self
            .rows
            .iter()
            .filter(|r| r.method == base)
            .map(|r| ((r.category.clone(), r.metric.clone()), r.value))
            .collect();
        for row in &mut self.rows {
            let reference = lookup
                .iter()
                .find(|((c, m), _)| *c == row.category && *m == row.metric)
                .and_then(|(_, v)| *v);
            row.pct_change_vs_base = match (row.value, reference) {
                (Some(v), Some(b)) if b != 0.0 => Some(percent_change(v, b)),
                _ => None,
            };
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Gaussian;
    use crate::pit::IdentityMap;
    use crate::special::{std_normal_cdf, std_normal_pdf};

    fn gaussian_crps(mu: f64, sigma: f64, y: f64) -> f64 {
        let z = (y - mu) / sigma;
        sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
    }

    #[test]
    fn crps_difference_matches_closed_forms() {
        let a = Gaussian::new(0.3, 1.4).unwrap();
        let b = Gaussian::new(-0.2, 0.8).unwrap();
        for y in [-3.0, -0.1, 0.5, 2.7] {
            let d = crps_difference(&a, &b, y).unwrap();
            let exact = gaussian_crps(0.3, 1.4, y) - gaussian_crps(-0.2, 0.8, y);
            assert!((d - exact).abs() < 1e-7, "{y}: {d} vs {exact}");
        }
        // Far outcomes: each score is y − μ − σ/√π.
        let far = (-0.2 - 0.3) - (1.4 - 0.8) / std::f64::consts::PI.sqrt();
        let d = crps_difference(&a, &b, 1e200).unwrap();
        assert!((d - far).abs() < 1e-7, "{d} vs {far}");
        let near = -far;
        let d = crps_difference(&a, &b, -1e200).unwrap();
        assert!((d - (near - 2.0 * (1.4 - 0.8) / std::f64::consts::PI.sqrt())).abs() < 1e-7, "{d}");
    }

    #[test]
    fn squared_error_difference_survives_huge_outcomes() {
        assert_eq!(squared_error_difference(1.0, 3.0, 0.0), 1.0 - 9.0);
        let d: f64 = squared_error_difference(1.0, 0.0, 1e300);
        assert!(d < 0.0 && d.is_finite());
    }

    #[test]
    fn standard_normal_at_zero() {
        let c = crps(&Gaussian::standard(), 0.0, &ScoreConfig::default()).unwrap();
        let exact = 2.0 * std_normal_pdf(0.0) - 1.0 / std::f64::consts::PI.sqrt();
        assert!((c / exact - 1.0).abs() < 1e-3);
        assert!((exact - 0.2337).abs() < 1e-4);
    }

    #[test]
    fn explicit_bounds_are_widened_to_cover_outcome() {
        let cfg = ScoreConfig::with_bounds(-3.0, 3.0, 4096).unwrap();
        let c = crps(&Gaussian::standard(), 5.0, &cfg).unwrap();
        assert!((c / gaussian_crps(0.0, 1.0, 5.0) - 1.0).abs() < 1e-2);
        assert!(ScoreConfig::with_bounds(1.0, 0.0, 100).is_err());
        assert!(ScoreConfig::<f64>::with_bounds(0.0, 1.0, 4).is_err());
    }

    #[test]
    fn unit_weights_reduce_to_unweighted() {
        let d = Gaussian::new(0.4, 1.3).unwrap();
        let plain = crps(&d, 1.1, &ScoreConfig::default()).unwrap();
        let thr = ScoreConfig {
            weight: Weight::Threshold(Arc::new(|_| 1.0)),
            ..ScoreConfig::default()
        };
        assert_eq!(crps(&d, 1.1, &thr).unwrap(), plain);
        let q = ScoreConfig {
            weight: Weight::Quantile(Arc::new(|_| 1.0)),
            grid_size: 201,
            ..ScoreConfig::default()
        };
        assert_eq!(crps(&d, 1.1, &q).unwrap(), crps_via_pinball(&d, 1.1, 201).unwrap());
    }

    #[test]
    fn pinball_cases() {
        let d = Gaussian::new(2.0_f64, 1.0).unwrap();
        assert!((pinball(&d, 5.0, 0.5).unwrap() - 1.5).abs() < 1e-12);
        assert!(pinball(&d, 2.0, 0.5).unwrap().abs() < 1e-12);
        assert!(pinball(&d, 2.0, 1.0).is_err());
    }

    #[test]
    fn ise_zero_when_maps_agree() {
        let r = ise_pit(&IdentityMap, &IdentityMap, &Gaussian::<f64>::standard(), 100).unwrap();
        assert_eq!(r.ise, 0.0);
        assert_eq!(r.capped, 0);
    }

    #[test]
    fn mean_and_rmse() {
        let d = vec![Gaussian::new(5.0_f64, 3.0).unwrap(); 4];
        assert!((rmse_of_mean(&d, &[0.0; 4]).unwrap() - 5.0).abs() < 1e-6);
        let z = vec![Gaussian::new(0.0, 2.0).unwrap(); 3];
        assert!(rmse_of_mean(&z, &[0.0; 3]).unwrap() < 1e-9);
        assert!(rmse_of_mean(&z, &[0.0; 2]).is_err());
    }

    #[test]
    fn table_percent_change_and_missing_cells() {
        let mut t = ScoreTable {
            rows: vec![
                ScoreRow {
                    category: "Overall".into(),
                    method: "base".into(),
                    metric: "rmse".into(),
                    value: Some(12.2),
                    pct_change_vs_base: None,
                },
                ScoreRow {
                    category: "Overall".into(),
                    method: "parametric".into(),
                    metric: "rmse".into(),
                    value: Some(10.6),
                    pct_change_vs_base: None,
                },
                ScoreRow {
                    category: "RI".into(),
                    method: "parametric".into(),
                    metric: "rmse".into(),
                    value: None,
                    pct_change_vs_base: None,
                },
            ],
        };
        t.fill_percent_change("base");
        assert_eq!(t.rows[0].pct_change_vs_base, Some(0.0));
        assert!((t.rows[1].pct_change_vs_base.unwrap() + 13.1148).abs() < 1e-3);
        assert_eq!(t.rows[2].pct_change_vs_base, None);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("category,method,metric,value,pct_change_vs_base\n"));
        assert!(text.contains("RI,parametric,rmse,,\n"));
    }
}
