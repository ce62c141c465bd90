//! Closed-form univariate families: Gaussian, sinh-arcsinh and Kumaraswamy.

use serde::{Deserialize, Serialize};

use crate::special::{std_normal_cdf, std_normal_ln_cdf, std_normal_pdf, std_normal_quantile};
use crate::{Error, Real, Result};

/// A continuous univariate law.
pub trait ScalarDistribution<T: Real> {
    fn cdf(&self, x: T) -> T;

    fn pdf(&self, x: T) -> T;

    /// Inverse CDF. Implementations reject levels outside their valid range.
    fn quantile(&self, u: T) -> Result<T>;

    /// `1 − cdf(x)`; overridden where the upper tail can be computed without
    /// cancellation.
    fn sf(&self, x: T) -> T {
        T::one() - self.cdf(x)
    }

    fn ln_pdf(&self, x: T) -> T {
        self.pdf(x).ln()
    }

    fn ln_cdf(&self, x: T) -> T {
        self.cdf(x).ln()
    }

    fn ln_sf(&self, x: T) -> T {
        self.sf(x).ln()
    }

    /// [`ScalarDistribution::cdf`] with NaN rejected.
    fn checked_cdf(&self, x: T) -> Result<T> {
        if x.is_nan() {
            return Err(Error::OutOfDomain {
                value: f64::NAN,
                domain: "finite or infinite real",
            });
        }
        Ok(self.cdf(x))
    }
}

impl<T: Real, D: ScalarDistribution<T> + ?Sized> ScalarDistribution<T> for &D {
    fn cdf(&self, x: T) -> T {
        (**self).cdf(x)
    }
    fn pdf(&self, x: T) -> T {
        (**self).pdf(x)
    }
    fn quantile(&self, u: T) -> Result<T> {
        (**self).quantile(u)
    }
    fn sf(&self, x: T) -> T {
        (**self).sf(x)
    }
    fn ln_pdf(&self, x: T) -> T {
        (**self).ln_pdf(x)
    }
    fn ln_cdf(&self, x: T) -> T {
        (**self).ln_cdf(x)
    }
    fn ln_sf(&self, x: T) -> T {
        (**self).ln_sf(x)
    }
}

fn open_unit<T: Real>(u: T) -> Result<()> {
    if u > T::zero() && u < T::one() {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            value: u.as_f64(),
            domain: "(0, 1)",
        })
    }
}

fn finite<T: Real>(name: &'static str, v: T) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite, got {v}")))
    }
}

fn positive<T: Real>(name: &'static str, v: T) -> Result<()> {
    finite(name, v)?;
    if v > T::zero() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

/// Normal law N(mean, sd²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Gaussian<T: Real> {
    pub mean: T,
    pub sd: T,
}

impl<T: Real> Gaussian<T> {
    pub fn new(mean: T, sd: T) -> Result<Self> {
        finite("mean", mean)?;
        positive("sd", sd)?;
        Ok(Self { mean, sd })
    }

    pub fn standard() -> Self {
        Self {
            mean: T::zero(),
            sd: T::one(),
        }
    }
}

impl<T: Real> ScalarDistribution<T> for Gaussian<T> {
    fn cdf(&self, x: T) -> T {
        std_normal_cdf((x - self.mean) / self.sd)
    }

    fn pdf(&self, x: T) -> T {
        std_normal_pdf((x - self.mean) / self.sd) / self.sd
    }

    fn quantile(&self, u: T) -> Result<T> {
        open_unit(u)?;
        Ok(self.mean + self.sd * std_normal_quantile(u))
    }

    fn sf(&self, x: T) -> T {
        std_normal_cdf((self.mean - x) / self.sd)
    }

    fn ln_pdf(&self, x: T) -> T {
        let z = (x - self.mean) / self.sd;
        -z * z / T::of(2.0) - T::of(0.5 * (2.0 * std::f64::consts::PI).ln()) - self.sd.ln()
    }

    fn ln_cdf(&self, x: T) -> T {
        std_normal_ln_cdf((x - self.mean) / self.sd)
    }

    fn ln_sf(&self, x: T) -> T {
        std_normal_ln_cdf((self.mean - x) / self.sd)
    }
}

/// Four-parameter sinh-arcsinh law with CDF
/// `Φ(sinh(δ·asinh((t − μ)/σ) − ε))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SinhArcsinh<T: Real> {
    pub mu: T,
    pub sigma: T,
    /// Skewness.
    pub eps: T,
    /// Tail weight.
    pub delta: T,
}

impl<T: Real> SinhArcsinh<T> {
    pub fn new(mu: T, sigma: T, eps: T, delta: T) -> Result<Self> {
        finite("mu", mu)?;
        positive("sigma", sigma)?;
        finite("eps", eps)?;
        positive("delta", delta)?;
        Ok(Self {
            mu,
            sigma,
            eps,
            delta,
        })
    }

    #[inline]
    fn inner(&self, x: T) -> T {
        let z = (x - self.mu) / self.sigma;
        self.delta * z.asinh() - self.eps
    }
}

impl<T: Real> ScalarDistribution<T> for SinhArcsinh<T> {
    fn cdf(&self, x: T) -> T {
        if x == T::infinity() {
            return T::one();
        }
        if x == T::neg_infinity() {
            return T::zero();
        }
        std_normal_cdf(self.inner(x).sinh())
    }

    fn pdf(&self, x: T) -> T {
        if !x.is_finite() {
            return T::zero();
        }
        let z = (x - self.mu) / self.sigma;
        let s = self.delta * z.asinh() - self.eps;
        let w = s.sinh();
        let dw_dx = s.cosh() * self.delta / ((T::one() + z * z).sqrt() * self.sigma);
        std_normal_pdf(w) * dw_dx
    }

    fn quantile(&self, u: T) -> Result<T> {
        open_unit(u)?;
        let w = std_normal_quantile(u);
        Ok(self.mu + self.sigma * ((w.asinh() + self.eps) / self.delta).sinh())
    }

    fn sf(&self, x: T) -> T {
        if x == T::infinity() {
            return T::zero();
        }
        if x == T::neg_infinity() {
            return T::one();
        }
        std_normal_cdf(-self.inner(x).sinh())
    }
}

/// Clamp applied to PIT values before taking logs.
pub const PIT_CLAMP: f64 = 1e-12;

/// Kumaraswamy law on [0, 1] with CDF `1 − (1 − αᵃ)ᵇ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Kumaraswamy<T: Real> {
    pub a: T,
    pub b: T,
}

impl<T: Real> Kumaraswamy<T> {
    pub fn new(a: T, b: T) -> Result<Self> {
        positive("a", a)?;
        positive("b", b)?;
        Ok(Self { a, b })
    }

    /// Maximum-likelihood member for a sample on [0, 1].
    ///
    /// For fixed `a` the likelihood is maximized by `b = −n / Σ ln(1 − zᵃ)`,
    /// leaving a one-dimensional search over `ln a`. Values are clamped to
    /// `[PIT_CLAMP, 1 − PIT_CLAMP]`.
    pub fn fit_mle(z: &[T]) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::DegenerateData("Kumaraswamy MLE needs at least two values".into()));
        }
        let eps = PIT_CLAMP;
        let z: Vec<f64> = z.iter().map(|v| v.as_f64().clamp(eps, 1.0 - eps)).collect();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite value in Kumaraswamy sample".into()));
        }
        let n = z.len() as f64;
        let sum_ln_z: f64 = z.iter().map(|v| v.ln()).sum();
        let b_of = |a: f64| -n / z.iter().map(|v| (-v.powf(a)).ln_1p()).sum::<f64>();
        let profile = |ln_a: f64| {
            let a = ln_a.exp();
            let b = b_of(a);
            let tail: f64 = z.iter().map(|v| (-v.powf(a)).ln_1p()).sum();
            n * (a.ln() + b.ln()) + (a - 1.0) * sum_ln_z + (b - 1.0) * tail
        };
        let (mut lo, mut hi) = (-8.0f64, 8.0f64);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let (mut m1, mut m2) = (hi - r * (hi - lo), lo + r * (hi - lo));
        let (mut f1, mut f2) = (profile(m1), profile(m2));
        while hi - lo > 1e-10 {
            if f1 < f2 {
                lo = m1;
                (m1, f1) = (m2, f2);
                m2 = lo + r * (hi - lo);
                f2 = profile(m2);
            } else {
                hi = m2;
                (m2, f2) = (m1, f1);
                m1 = hi - r * (hi - lo);
                f1 = profile(m1);
            }
        }
        let a = ((lo + hi) / 2.0).exp();
        Self::new(T::of(a), T::of(b_of(a)))
    }

    pub fn uniform() -> Self {
        Self {
            a: T::one(),
            b: T::one(),
        }
    }

    fn check_unit(alpha: T) -> Result<()> {
        if alpha >= T::zero() && alpha <= T::one() {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                value: alpha.as_f64(),
                domain: "[0, 1]",
            })
        }
    }

    /// CDF that rejects arguments outside [0, 1].
    pub fn try_cdf(&self, alpha: T) -> Result<T> {
        Self::check_unit(alpha)?;
        Ok(self.cdf(alpha))
    }

    /// PDF that rejects arguments outside [0, 1].
    pub fn try_pdf(&self, alpha: T) -> Result<T> {
        Self::check_unit(alpha)?;
        Ok(self.pdf(alpha))
    }

    /// `ln(1 − αᵃ)` computed without cancellation near α = 1.
    #[inline]
    /// Unclamped log-density at `α` from `ln α` and `ln(1 − α)`.
    ///
    /// Whichever log is accurate drives the evaluation, so neither tail
    /// loses precision or overflows where the density itself would.
    pub fn ln_pdf_from_logs(&self, ln_alpha: T, ln_c: T) -> T {
        let one = T::one();
        let upper = ln_alpha > -T::LN_2();
        let la = if upper { (-ln_c.exp()).ln_1p() } else { ln_alpha };
        let tail = -(self.a * la).exp_m1();
        // 1 − α^a ≈ a·c once c is too small to carry through exp.
        let ln_tail = if upper && !(tail > T::zero()) {
            self.a.ln() + ln_c
        } else {
            tail.ln()
        };
        self.a.ln() + self.b.ln() + (self.a - one) * la + (self.b - one) * ln_tail
    }

    fn ln_one_minus_pow(&self, alpha: T) -> T {
        (-(self.a * alpha.ln()).exp_m1()).ln()
    }

    /// Log-density with α clamped to `[1e-12, 1 − 1e-12]`.
    pub fn ln_pdf(&self, alpha: T) -> T {
        let eps = T::of(PIT_CLAMP);
        let alpha = alpha.max(eps).min(T::one() - eps);
        self.a.ln() + self.b.ln() + (self.a - T::one()) * alpha.ln()
            + (self.b - T::one()) * self.ln_one_minus_pow(alpha)
    }

    /// Negative log-likelihood of one observation and its gradient
    /// with respect to `(a, b)`.
    pub fn nll_with_grad(&self, alpha: T) -> (T, T, T) {
        let eps = T::of(PIT_CLAMP);
        let alpha = alpha.max(eps).min(T::one() - eps);
        let ln_alpha = alpha.ln();
        let pow = (self.a * ln_alpha).exp();
        let ln_rest = self.ln_one_minus_pow(alpha);
        let one = T::one();
        let ln_f = self.a.ln() + self.b.ln() + (self.a - one) * ln_alpha + (self.b - one) * ln_rest;
        // d/da ln(1 - α^a) = -α^a ln α / (1 - α^a)
        let rest = -(self.a * ln_alpha).exp_m1();
        let dln_da = one / self.a + ln_alpha - (self.b - one) * pow * ln_alpha / rest;
        let dln_db = one / self.b + ln_rest;
        (-ln_f, -dln_da, -dln_db)
    }
}

impl<T: Real> ScalarDistribution<T> for Kumaraswamy<T> {
    fn cdf(&self, alpha: T) -> T {
        if alpha <= T::zero() {
            return T::zero();
        }
        if alpha >= T::one() {
            return T::one();
        }
        -(self.b * self.ln_one_minus_pow(alpha)).exp_m1()
    }

    fn pdf(&self, alpha: T) -> T {
        if alpha < T::zero() || alpha > T::one() {
            return T::zero();
        }
        let one = T::one();
        self.a * self.b * alpha.powf(self.a - one) * (one - alpha.powf(self.a)).powf(self.b - one)
    }

    fn quantile(&self, u: T) -> Result<T> {
        Self::check_unit(u)?;
        if u == T::one() {
            return Ok(T::one());
        }
        let inner = -((-u).ln_1p() / self.b).exp_m1();
        Ok((inner.ln() / self.a).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn survival_functions_keep_upper_tail() {
        let g = Gaussian::new(1.0, 2.0).unwrap();
        assert!(close(g.sf(1.7), 1.0 - g.cdf(1.7), 1e-15));
        assert!(g.cdf(19.0) == 1.0 && g.sf(19.0) > 0.0);
        let s = SinhArcsinh::new(0.5, 1.5, 0.3, 0.7).unwrap();
        assert!(close(s.sf(0.9), 1.0 - s.cdf(0.9), 1e-15));
        assert!(s.cdf(70.0) == 1.0 && s.sf(70.0) > 0.0);
    }

    #[test]
    fn kumaraswamy_log_density_resolves_both_tails() {
        let k = Kumaraswamy::new(0.6f64, 0.2).unwrap();
        for alpha in [1e-3f64, 0.3, 0.5, 0.9, 1.0 - 1e-3] {
            let (a, b) = (k.ln_pdf_from_logs(alpha.ln(), (1.0 - alpha).ln()), k.pdf(alpha).ln());
            assert!((a - b).abs() <= 1e-9, "{alpha}: {a} vs {b}");
        }
        // ln(1 − (1 − c)^a) ≈ ln(a c) once α has rounded to 1, even past underflow.
        for ln_c in [-46.0, -800.0] {
            let want = (0.6f64 * 0.2).ln() + (0.2 - 1.0) * (0.6f64.ln() + ln_c);
            assert!((k.ln_pdf_from_logs(0.0, ln_c) - want).abs() <= 1e-9);
        }
        // ln α = −800 is far below the smallest double.
        let want = (0.12f64).ln() - 0.4 * -800.0;
        assert!((k.ln_pdf_from_logs(-800.0, 0.0) - want).abs() < 1e-9);
    }

    #[test]
    fn kumaraswamy_mle_recovers_parameters() {
        use rand::{Rng, SeedableRng};
        let truth = Kumaraswamy::new(2.0f64, 3.0).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let z: Vec<f64> = (0..20000).map(|_| truth.quantile(r.gen()).unwrap()).collect();
        let fit = Kumaraswamy::fit_mle(&z).unwrap();
        assert!((fit.a - 2.0).abs() < 0.1 && (fit.b - 3.0).abs() < 0.2, "{fit:?}");
        // The MLE beats nearby members on its own sample.
        let ll = |k: &Kumaraswamy<f64>| z.iter().map(|&v| k.pdf(v).ln()).sum::<f64>();
        for (da, db) in [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.01), (0.0, -0.01)] {
            let other = Kumaraswamy::new(fit.a + da, fit.b + db).unwrap();
            assert!(ll(&fit) >= ll(&other));
        }
        assert!(Kumaraswamy::<f64>::fit_mle(&[0.5]).is_err());
    }

    #[test]
    fn gaussian_log_tails_past_underflow() {
        let g = Gaussian::new(0.0f64, 1.0).unwrap();
        assert!((g.ln_pdf(0.7) - g.pdf(0.7).ln()).abs() < 1e-14);
        assert!((g.ln_cdf(-5.0) - g.cdf(-5.0).ln()).abs() < 1e-12);
        assert!((g.ln_sf(3.0) - g.sf(3.0).ln()).abs() < 1e-12);
        // Continuity across the asymptotic switch.
        let (a, b) = (g.ln_cdf(-20.0 - 1e-9), g.ln_cdf(-20.0 + 1e-9));
        assert!((a - b).abs() < 1e-6);
        assert!(g.cdf(-40.0) == 0.0 && g.ln_cdf(-40.0).is_finite());
    }

    #[test]
    fn gaussian_examples() {
        let g = Gaussian::new(0.0, 1.0).unwrap();
        assert_eq!(g.cdf(0.0), 0.5);
        assert!(close(g.cdf(1.96), 0.9750, 1e-4));
        for &x in &[-2.0, 0.3, 5.0] {
            assert!(close(g.quantile(g.cdf(x)).unwrap(), x, 1e-10));
        }
        assert!(Gaussian::new(0.0, 0.0).is_err());
        assert!(Gaussian::new(f64::NAN, 1.0).is_err());
        assert!(Gaussian::new(0.0, f64::INFINITY).is_err());
        assert!(g.checked_cdf(f64::NAN).is_err());
        assert!(g.quantile(0.0).is_err());
    }

    #[test]
    fn sas_examples() {
        let s = SinhArcsinh::new(0.0, 1.0, 0.0, 1.0).unwrap();
        assert!(close(s.cdf(0.0), 0.5, 1e-15));
        let s = SinhArcsinh::new(1.0, 2.0, 0.5, 1.5).unwrap();
        assert!(close(s.quantile(s.cdf(0.7)).unwrap(), 0.7, 1e-9));
        let s = SinhArcsinh::new(0.0, 1.0, 1.0, 1.0).unwrap();
        // Φ(sinh(-1)) = Φ(-1.1752011936438014) = 0.11995...
        assert!(close(s.cdf(0.0), 0.1199, 1e-3));
        assert!(s.quantile(1.0).is_err());
        assert!(s.quantile(-0.1).is_err());
        assert!(SinhArcsinh::new(0.0, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn kumaraswamy_examples() {
        let u = Kumaraswamy::new(1.0, 1.0).unwrap();
        assert!(close(u.cdf(0.3), 0.3, 1e-15));
        let k = Kumaraswamy::new(2.0, 1.0).unwrap();
        assert!(close(k.cdf(0.5), 0.25, 1e-15));
        let k = Kumaraswamy::new(2.0, 3.0).unwrap();
        assert_eq!(k.cdf(0.0), 0.0);
        assert_eq!(k.cdf(1.0), 1.0);
        assert!(k.try_cdf(1.2).is_err());
        assert!(k.try_pdf(-0.1).is_err());
        assert!(close(k.quantile(k.cdf(0.37)).unwrap(), 0.37, 1e-12));
        assert_eq!(k.quantile(0.0).unwrap(), 0.0);
        assert_eq!(k.quantile(1.0).unwrap(), 1.0);
    }

    #[test]
    fn kumaraswamy_density_integrates_to_one() {
        // Composite Simpson with 2000 panels as an independent oracle.
        let k = Kumaraswamy::new(2.0, 3.0).unwrap();
        let n = 2000;
        let h = 1.0 / n as f64;
        let mut s = k.pdf(0.0) + k.pdf(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * k.pdf(i as f64 * h);
        }
        assert!(close(s * h / 3.0, 1.0, 1e-6));
    }

    #[test]
    fn kumaraswamy_log_density_is_clamped() {
        let k = Kumaraswamy::new(0.5_f64, 0.5).unwrap();
        assert!(k.ln_pdf(0.0).is_finite());
        assert!(k.ln_pdf(1.0).is_finite());
        assert!(k.nll_with_grad(0.0).0.is_finite());
        assert!(close(k.ln_pdf(0.4), k.pdf(0.4).ln(), 1e-12));
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let h = 1e-6;
        for &(a, b, z) in &[(2.0, 3.0, 0.3), (0.7, 1.4, 0.9), (5.0, 0.4, 0.05)] {
            let (_, ga, gb) = Kumaraswamy::new(a, b).unwrap().nll_with_grad(z);
            let f = |a: f64, b: f64| Kumaraswamy::new(a, b).unwrap().nll_with_grad(z).0;
            let fa = (f(a + h, b) - f(a - h, b)) / (2.0 * h);
            let fb = (f(a, b + h) - f(a, b - h)) / (2.0 * h);
            assert!(((ga - fa) / fa).abs() < 1e-6, "{ga} vs {fa}");
            assert!(((gb - fb) / fb).abs() < 1e-6, "{gb} vs {fb}");
        }
    }

    #[test]
    fn single_precision_families() {
        let k = Kumaraswamy::<f32>::new(2.0, 1.0).unwrap();
        assert!((k.cdf(0.5) - 0.25).abs() < 1e-6);
        let g = Gaussian::<f32>::standard();
        assert!((g.cdf(0.0) - 0.5).abs() < 1e-7);
    }
}
