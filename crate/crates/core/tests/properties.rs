use proptest::prelude::*;
use windstorm_core::analysis::{chi_estimate, isotonic_non_increasing};
use windstorm_core::extract::{bearing, khachiyan_mvee, offset};
use windstorm_core::margins::{gpd_inverse_survival, gpd_survival, CellMarginal};
use windstorm_core::windfield::{anisotropic_distance, AnisotropyOrder, FootprintDistribution};

const ORDERS: [AnisotropyOrder; 2] = [AnisotropyOrder::RotateThenScale, AnisotropyOrder::ScaleThenRotate];

proptest! {
    #[test]
    fn footprint_distribution_inverse(
        sample in prop::collection::vec((0.01f64..10.0, 0.1f64..5.0), 2..60),
        cap in 5.0f64..12.0,
    ) {
        prop_assume!(sample.iter().filter(|(v, _)| *v <= cap).count() >= 2);
        let d = FootprintDistribution::from_weighted(sample, cap, 0.001).unwrap();
        for i in 1..100 {
            let p = i as f64 / 100.0;
            prop_assert!((d.cdf(d.quantile(p)) - p).abs() < 1e-9);
        }
        prop_assert!(d.upper_limit() <= cap);
    }

    #[test]
    fn anisotropic_distance_is_symmetric(
        a in prop::array::uniform2(-50.0f64..50.0),
        b in prop::array::uniform2(-50.0f64..50.0),
        psi in -3.2f64..3.2,
        zeta in 1.0f64..5.0,
    ) {
        for order in ORDERS {
            let (d1, d2) = (anisotropic_distance(a, b, psi, zeta, order), anisotropic_distance(b, a, psi, zeta, order));
            prop_assert!((d1 - d2).abs() <= 1e-12 * d1.max(1.0));
            let euclid = (a[0] - b[0]).hypot(a[1] - b[1]);
            prop_assert!((anisotropic_distance(a, b, psi, 1.0, order) - euclid).abs() <= 1e-9 * euclid.max(1.0));
            prop_assert!(d1 >= euclid * (1.0 - 1e-12));
        }
    }

    #[test]
    fn joint_exceedances_never_increase_with_q(
        pairs in prop::collection::vec((0.0f64..8.0, 0.0f64..8.0), 100..300),
        mut q in prop::collection::vec(0.01f64..0.99, 1..8),
    ) {
        q.sort_by(f64::total_cmp);
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let est = chi_estimate(&a, &b, &q, 6).unwrap();
        prop_assert!(est.joint.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(est.conditioning.windows(2).all(|w| w[1] <= w[0]));
        for (c, (lo, hi)) in est.chi.iter().zip(est.lower.iter().zip(&est.upper)) {
            if let (Some(c), Some(lo), Some(hi)) = (c, lo, hi) {
                prop_assert!((0.0..=1.0).contains(c) && lo <= c && c <= hi);
            }
        }
    }

    #[test]
    fn exp_transform_is_non_negative_and_monotone(
        mut values in prop::collection::vec(0.0f64..50.0, 200..400),
        probes in prop::collection::vec(-10.0f64..80.0, 1..50),
    ) {
        let cell = match CellMarginal::fit(&values, 0.9, 10) {
            Ok(c) => c,
            Err(_) => return Ok(()),
        };
        for &x in &probes {
            prop_assert!(cell.to_exp(x).0 >= 0.0);
        }
        values.sort_by(f64::total_cmp);
        let e: Vec<f64> = values.iter().map(|&x| cell.to_exp(x).0).collect();
        prop_assert!(e.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn gpd_inverse_survival_round_trip(sigma in 0.1f64..10.0, xi in -0.9f64..1.0, s in 1e-6f64..1.0) {
        let x = gpd_inverse_survival(sigma, xi, s);
        prop_assert!((gpd_survival(sigma, xi, x) - s).abs() <= 1e-9 * s.max(1e-3));
    }

    #[test]
    fn mvee_contains_every_point(pts in prop::collection::vec(prop::array::uniform2(-100.0f64..100.0), 1..40)) {
        let e = khachiyan_mvee(&pts, 1e-4).unwrap();
        for p in &pts {
            prop_assert!(e.quad_form(*p) <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn offset_and_bearing_round_trip(p in prop::array::uniform2(-100.0f64..100.0), r in 0.1f64..50.0, theta in -3.14f64..3.14) {
        let q = offset(p, r, theta);
        prop_assert!((bearing(q[0] - p[0], q[1] - p[1]) - theta).abs() < 1e-9);
        prop_assert!(((q[0] - p[0]).hypot(q[1] - p[1]) - r).abs() < 1e-9);
    }

    #[test]
    fn isotonic_fit_is_non_increasing(y in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let fit = isotonic_non_increasing(&y, &vec![1.0; y.len()]).unwrap();
        prop_assert!(fit.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        let (sy, sf): (f64, f64) = (y.iter().sum(), fit.iter().sum());
        prop_assert!((sy - sf).abs() < 1e-9);
    }
}
