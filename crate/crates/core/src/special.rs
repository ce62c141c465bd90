//! Standard normal kernels.
//!
//! The CDF goes through the complementary error function so that both tails
//! keep full relative precision. The quantile uses Acklam's rational
//! approximation followed by one Halley refinement step, which brings the
//! result to within a few ulps.

use crate::Real;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn std_normal_pdf<T: Real>(x: T) -> T {
    let x = x.as_f64();
    T::of(FRAC_1_SQRT_2PI * (-0.5 * x * x).exp())
}

/// Φ(x).
#[inline]
pub fn std_normal_cdf<T: Real>(x: T) -> T {
    let x = x.as_f64();
    T::of(0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2))
}

/// 1 − Φ(x), accurate in the upper tail.
#[inline]
pub fn std_normal_sf<T: Real>(x: T) -> T {
    let x = x.as_f64();
    T::of(0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// ln Φ(x), finite wherever x is, including far below where Φ underflows.
pub fn std_normal_ln_cdf<T: Real>(x: T) -> T {
    let x = x.as_f64();
    let v = if x > 0.0 {
        (-0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)).ln_1p()
    } else if x > -20.0 {
        (0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic series; the first omitted term is below 1e-12.
        let r = 1.0 / (x * x);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r))));
        -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
    };
    T::of(v)
}

/// Φ⁻¹(p). Returns ∓∞ at p ∈ {0, 1} and NaN outside [0, 1].
pub fn std_normal_quantile<T: Real>(p: T) -> T {
    T::of(quantile_f64(p.as_f64()))
}

fn quantile_f64(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        // 1 - p is exact here.
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

/// Quantile for p ∈ (0, 0.5].
fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    // Halley step on Φ(x) - p.
    let e = 0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}
