//! Recalibrated predictive distributions `F̃(y|x) = Ĝ(F̂(y|x)|x)`.

use crate::distributions::ScalarDistribution;
use crate::pit::{LocalPitMap, PitMap};
use crate::{Error, Real, Result};

/// Base-quantile levels defining the initial inversion bracket.
const BRACKET_LEVEL: f64 = 1e-6;
/// Maximum number of outward doublings of the bracket.
const MAX_EXPANSIONS: usize = 60;
/// Step in α for finite-difference PIT densities.
pub const FD_STEP: f64 = 1e-4;

/// A base predictive distribution at a fixed `x` composed with a PIT map.
pub struct RecalibratedDistribution<'m, T: Real, D> {
    base: D,
    local: Box<dyn LocalPitMap<T> + 'm>,
    x: Vec<T>,
}

impl<'m, T: Real, D: ScalarDistribution<T>> RecalibratedDistribution<'m, T, D> {
    /// Binds `model` at `x` and composes it with `base`, the base law at the same `x`.
    pub fn new<M: PitMap<T> + ?Sized>(base: D, model: &'m M, x: &[T]) -> Result<Self> {
        let local = model.localize(x)?;
        Ok(Self {
            base,
            local,
            x: x.to_vec(),
        })
    }

    /// Composes `base` with an already localized map.
    pub fn from_local(base: D, local: Box<dyn LocalPitMap<T> + 'm>, x: Vec<T>) -> Self {
        Self { base, local, x }
    }

    pub fn base(&self) -> &D {
        &self.base
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    /// Whether the bound PIT map fell back to the identity.
    pub fn is_fallback(&self) -> bool {
        self.local.is_fallback()
    }

    /// `Ĝ(α|x)` of the bound map.
    pub fn g(&self, alpha: T) -> T {
        self.local.g(alpha)
    }

    /// `F̃(y|x)`; rejects non-finite `y`.
    pub fn recalibrated_cdf(&self, y: T) -> Result<T> {
        if !y.is_finite() {
            return Err(Error::OutOfDomain {
                value: y.as_f64(),
                domain: "finite reals",
            });
        }
        Ok(self.cdf(y))
    }

    /// PIT density `ĝ(α|x)`, from the map when available, else by finite differences.
    pub fn pit_density(&self, alpha: T) -> T {
        if let Some(d) = self.local.density(alpha) {
            return d.max(T::zero());
        }
        let h = T::of(FD_STEP);
        let lo = (alpha - h).max(T::zero());
        let hi = (alpha + h).min(T::one());
        ((self.local.g(hi) - self.local.g(lo)) / (hi - lo)).max(T::zero())
    }

    /// `f̃(y|x) = ĝ(F̂(y|x)|x) · f̂(y|x)`.
    pub fn recalibrated_pdf(&self, y: T) -> Result<T> {
        if !y.is_finite() {
            return Err(Error::OutOfDomain {
                value: y.as_f64(),
                domain: "finite reals",
            });
        }
        Ok(self.pdf(y))
    }

    /// Smallest-width bracket `[lo, hi]` with `F̃(lo) ≤ τ ≤ F̃(hi)`.
    fn bracket(&self, tau: T) -> Result<(T, T)> {
        let fail = || Error::BracketFailure { tau: tau.as_f64() };
        let mut lo = self.base.quantile(T::of(BRACKET_LEVEL))?;
        let mut hi = self.base.quantile(T::one() - T::of(BRACKET_LEVEL))?;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(fail());
        }
        let mut width = (hi - lo).max(T::one());
        let mut expansions = 0;
        while self.cdf(lo) > tau {
            if expansions == MAX_EXPANSIONS {
                return Err(fail());
            }
            lo -= width;
            width *= T::of(2.0);
            expansions += 1;
        }
        let mut width = (hi - lo).max(T::one());
        let mut expansions = 0;
        while self.cdf(hi) < tau {
            if expansions == MAX_EXPANSIONS {
                return Err(fail());
            }
            hi += width;
            width *= T::of(2.0);
            expansions += 1;
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(fail());
        }
        Ok((lo, hi))
    }

    /// `F̃⁻¹(τ|x)` by bisection down to floating-point resolution.
    pub fn recalibrated_quantile(&self, tau: T) -> Result<T> {
        if !(tau > T::zero() && tau < T::one()) {
            return Err(Error::OutOfDomain {
                value: tau.as_f64(),
                domain: "(0, 1)",
            });
        }
        let (mut lo, mut hi) = self.bracket(tau)?;
        for _ in 0..2000 {
            let mid = lo + (hi - lo) / T::of(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Both ends bracket τ; report the one whose CDF is closer.
        if (self.cdf(lo) - tau).abs() < (self.cdf(hi) - tau).abs() {
            Ok(lo)
        } else {
            Ok(hi)
        }
    }

    /// Transport map `T(y) = F̃⁻¹(F̂(y|x)|x)` from the base to the recalibrated law.
    ///
    /// Where `F̂(y|x)` saturates at 0 or 1 in floating point, `y` is returned unchanged.
    pub fn ot_map(&self, y: T) -> Result<T> {
        if !y.is_finite() {
            return Err(Error::OutOfDomain {
                value: y.as_f64(),
                domain: "finite reals",
            });
        }
        let u = self.base.cdf(y);
        if u <= T::zero() || u >= T::one() {
            return Ok(y);
        }
        self.recalibrated_quantile(u)
    }
}

impl<T: Real, D: ScalarDistribution<T>> ScalarDistribution<T> for RecalibratedDistribution<'_, T, D> {
    fn cdf(&self, y: T) -> T {
        self.local.g(self.base.cdf(y).clamp_unit()).clamp_unit()
    }

    fn pdf(&self, y: T) -> T {
        // Heavy recalibrated tails keep mass where f̂ and F̂ underflow, and ĝ
        // alone can overflow there; the composition is formed in log space.
        let (ln_f, ln_u, ln_c) = (self.base.ln_pdf(y), self.base.ln_cdf(y), self.base.ln_sf(y));
        let none = T::neg_infinity();
        if ln_f == none || ln_u == none || ln_c == none {
            return T::zero();
        }
        if let Some(ln_g) = self.local.ln_density(ln_u, ln_c) {
            return (ln_g + ln_f).exp();
        }
        let u = ln_u.exp();
        if u <= T::zero() || u >= T::one() {
            return T::zero();
        }
        self.pit_density(u) * ln_f.exp()
    }

    fn quantile(&self, u: T) -> Result<T> {
        self.recalibrated_quantile(u)
    }
}

/// Both sides of the threshold-probability identity at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdError<T> {
    /// `p = F̂(t|x)`.
    pub p: T,
    /// `|F̃(t|x) − F(t|x)|`.
    pub cdf_side: T,
    /// `|Ĝ(p|x) − G(p|x)|`.
    pub pit_side: T,
}

/// Error of the recalibrated threshold probability at `t`.
///
/// `true_cdf` gives `F(t|x)` directly; without it `F(t|x)` is taken as `G(F̂(t|x)|x)`.
pub fn threshold_prob_error<T, D>(
    rd: &RecalibratedDistribution<'_, T, D>,
    true_g: &dyn LocalPitMap<T>,
    true_cdf: Option<&dyn Fn(T) -> T>,
    t: T,
) -> Result<ThresholdError<T>>
where
    T: Real,
    D: ScalarDistribution<T>,
{
    let recal = rd.recalibrated_cdf(t)?;
    let p = rd.base.cdf(t).clamp_unit();
    let g_true = true_g.g(p);
    let truth = true_cdf.map_or(g_true, |f| f(t));
    Ok(ThresholdError {
        p,
        cdf_side: (recal - truth).abs(),
        pit_side: (rd.g(p) - g_true).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Gaussian;
    use crate::pit::{FnPitMap, IdentityMap};
    use crate::quadrature::adaptive_simpson;
    use crate::special::{std_normal_cdf, std_normal_quantile};
    use crate::ConstantKumaraswamy;
    use crate::Kumaraswamy;

    fn shift_map() -> FnPitMap<impl Fn(f64, &[f64]) -> f64 + Send + Sync> {
        FnPitMap::new(|a: f64, _x: &[f64]| {
            if a <= 0.0 {
                0.0
            } else if a >= 1.0 {
                1.0
            } else {
                std_normal_cdf(std_normal_quantile(a) - 1.0)
            }
        })
    }

    #[test]
    fn identity_leaves_base_untouched() {
        let base = Gaussian::new(0.3_f64, 1.7).unwrap();
        let rd = RecalibratedDistribution::new(base, &IdentityMap, &[]).unwrap();
        for y in [-3.0, -0.5, 0.0, 0.2, 4.0] {
            assert_eq!(rd.recalibrated_cdf(y).unwrap(), base.cdf(y));
            assert!((rd.recalibrated_pdf(y).unwrap() - base.pdf(y)).abs() < 1e-15);
            assert!((rd.ot_map(y).unwrap() - y).abs() < 1e-8);
        }
        assert!(rd.recalibrated_cdf(f64::NAN).is_err());
        assert!(rd.recalibrated_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn gaussian_quantile_and_roundtrip() {
        let rd = RecalibratedDistribution::new(Gaussian::<f64>::standard(), &IdentityMap, &[]).unwrap();
        assert!((rd.recalibrated_quantile(0.975).unwrap() - 1.959964).abs() < 1e-3);
        let map = ConstantKumaraswamy(Kumaraswamy::new(2.0_f64, 0.7).unwrap());
        let rd = RecalibratedDistribution::new(Gaussian::standard(), &map, &[]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for tau in [0.05, 0.2, 0.5, 0.8, 0.95] {
            let q = rd.recalibrated_quantile(tau).unwrap();
            assert!((rd.cdf(q) - tau).abs() < 1e-8);
            assert!(q >= prev);
            prev = q;
        }
        assert!(rd.recalibrated_quantile(0.0).is_err());
        assert!(rd.recalibrated_quantile(1.0).is_err());
    }

    #[test]
    fn density_integrates_and_matches_cdf() {
        let map = ConstantKumaraswamy(Kumaraswamy::new(0.6_f64, 1.8).unwrap());
        let rd = RecalibratedDistribution::new(Gaussian::new(1.0, 2.0).unwrap(), &map, &[]).unwrap();
        let total = adaptive_simpson(|y| rd.pdf(y), -40.0, 42.0, 1e-10, 40).unwrap();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
        for y in [-2.0, 0.0, 1.5, 3.0] {
            let h = 1e-5;
            let fd = (rd.cdf(y + h) - rd.cdf(y - h)) / (2.0 * h);
            assert!(((rd.pdf(y) - fd) / fd).abs() < 1e-4);
        }
    }

    #[test]
    fn finite_difference_density_without_closed_form() {
        let k = Kumaraswamy::new(2.0, 3.0).unwrap();
        let map = FnPitMap::new(move |a: f64, _x: &[f64]| k.cdf(a));
        let rd = RecalibratedDistribution::new(Gaussian::standard(), &map, &[]).unwrap();
        for y in [-1.0, 0.0, 0.7] {
            let exact = k.pdf(std_normal_cdf(y)) * Gaussian::standard().pdf(y);
            assert!((rd.pdf(y) - exact).abs() < 1e-5);
        }
    }

    #[test]
    fn location_shift_transport() {
        let map = shift_map();
        let rd = RecalibratedDistribution::new(Gaussian::standard(), &map, &[]).unwrap();
        for i in 0..=60 {
            let y = -3.0 + 0.1 * i as f64;
            assert!((rd.ot_map(y).unwrap() - (y + 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn threshold_identity() {
        let map = FnPitMap::new(|a: f64, _x: &[f64]| if a == 0.5 { 0.25 } else { a });
        let rd = RecalibratedDistribution::new(Gaussian::standard(), &map, &[]).unwrap();
        let e = threshold_prob_error(&rd, &IdentityMap, None, 0.0).unwrap();
        assert_eq!(e.p, 0.5);
        assert_eq!(e.pit_side, 0.25);
        assert_eq!(e.cdf_side, 0.25);
        let same = threshold_prob_error(&rd, rd.local.as_ref(), None, 0.0).unwrap();
        assert_eq!(same.pit_side, 0.0);
    }
}
