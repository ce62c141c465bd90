//! Property checks of the distribution, recalibration and scoring layers.

use proptest::prelude::*;

use diagmap::scoring::{crps_difference, pinball_at, squared_error_difference};
use diagmap::{
    crps, ConstantKumaraswamy, Gaussian, IdentityMap, Kumaraswamy, LocalPitMap, RecalibratedDistribution,
    ScalarDistribution, ScoreConfig, SinhArcsinh,
};

fn gaussian_crps(mu: f64, sigma: f64, y: f64) -> f64 {
    use diagmap::special::{std_normal_cdf, std_normal_pdf};
    let z = (y - mu) / sigma;
    sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kumaraswamy_quantile_inverts_cdf(a in 0.1f64..10.0, b in 0.1f64..10.0, u in 0.001f64..0.999) {
        let k = Kumaraswamy::new(a, b).unwrap();
        let q = k.quantile(u).unwrap();
        prop_assert!((0.0..=1.0).contains(&q));
        // Near 1 with small shapes neighbouring doubles straddle a wide cdf
        // range, so require that u is bracketed by them.
        let (lo, hi) = (k.cdf(q.next_down().max(0.0)), k.cdf(q.next_up().min(1.0)));
        prop_assert!(lo - 1e-9 <= u && u <= hi + 1e-9, "cdf({q}) brackets [{lo}, {hi}], u = {u}");
    }

    #[test]
    fn kumaraswamy_map_is_monotone_with_fixed_endpoints(a in 0.05f64..20.0, b in 0.05f64..20.0) {
        let k = Kumaraswamy::new(a, b).unwrap();
        prop_assert_eq!(k.g(0.0), 0.0);
        prop_assert_eq!(k.g(1.0), 1.0);
        let g: Vec<f64> = (0..=200).map(|i| k.g(i as f64 / 200.0)).collect();
        prop_assert!(g.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sas_quantile_inverts_cdf(
        mu in -2.0f64..2.0, sigma in 0.1f64..2.0, eps in -2.0f64..2.0, delta in 0.3f64..2.0, u in 0.01f64..0.99,
    ) {
        let s = SinhArcsinh::new(mu, sigma, eps, delta).unwrap();
        let q = s.quantile(u).unwrap();
        prop_assert!((s.cdf(q) - u).abs() < 1e-9);
        prop_assert!((s.sf(q) - (1.0 - u)).abs() < 1e-9);
    }

    #[test]
    fn recalibrated_quantiles_invert_and_do_not_cross(
        a in 0.2f64..5.0, b in 0.2f64..5.0, t1 in 0.02f64..0.98, t2 in 0.02f64..0.98,
    ) {
        let map = ConstantKumaraswamy(Kumaraswamy::new(a, b).unwrap());
        let rd = RecalibratedDistribution::new(Gaussian::standard(), &map, &[0.0]).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (ql, qh) = (rd.recalibrated_quantile(lo).unwrap(), rd.recalibrated_quantile(hi).unwrap());
        prop_assert!(ql <= qh);
        prop_assert!((rd.recalibrated_cdf(ql).unwrap() - lo).abs() < 1e-6);
    }

    #[test]
    fn identity_map_reproduces_the_base(y in -6.0f64..6.0, mu in -1.0f64..1.0, sd in 0.2f64..3.0) {
        let base = Gaussian::new(mu, sd).unwrap();
        let rd = RecalibratedDistribution::new(base, &IdentityMap, &[]).unwrap();
        prop_assert!((rd.recalibrated_cdf(y).unwrap() - base.cdf(y)).abs() < 1e-15);
        prop_assert!((rd.recalibrated_pdf(y).unwrap() - base.pdf(y)).abs() < 1e-12 * base.pdf(y).max(1e-300));
        // F̂(y) carries absolute error near eps, which moves y by about eps / f̂(y).
        let tol = 1e-6 + 64.0 * f64::EPSILON / base.pdf(y);
        prop_assert!((rd.ot_map(y).unwrap() - y).abs() < tol);
    }

    #[test]
    fn grid_crps_matches_gaussian_closed_form(mu in -3.0f64..3.0, sd in 0.2f64..3.0, y in -6.0f64..6.0) {
        let d = Gaussian::new(mu, sd).unwrap();
        let grid = crps(&d, y, &ScoreConfig::default()).unwrap();
        let exact = gaussian_crps(mu, sd, y);
        prop_assert!((grid - exact).abs() <= 0.01 * exact);
    }

    #[test]
    fn crps_difference_agrees_with_separate_scores(
        m1 in -2.0f64..2.0, s1 in 0.3f64..2.0, m2 in -2.0f64..2.0, s2 in 0.3f64..2.0, y in -5.0f64..5.0,
    ) {
        let (a, b) = (Gaussian::new(m1, s1).unwrap(), Gaussian::new(m2, s2).unwrap());
        let d = crps_difference(&a, &b, y).unwrap();
        prop_assert!((d - (gaussian_crps(m1, s1, y) - gaussian_crps(m2, s2, y))).abs() < 1e-6);
    }

    #[test]
    fn squared_error_difference_is_exact_for_moderate_values(a in -10.0f64..10.0, b in -10.0f64..10.0, y in -10.0f64..10.0) {
        let direct = (a - y).powi(2) - (b - y).powi(2);
        prop_assert!((squared_error_difference(a, b, y) - direct).abs() < 1e-9);
    }

    #[test]
    fn pinball_loss_is_nonnegative(q in -10.0f64..10.0, y in -10.0f64..10.0, tau in 0.0f64..1.0) {
        prop_assert!(pinball_at(q, y, tau) >= 0.0);
    }
}
